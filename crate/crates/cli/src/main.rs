//! Command-line front end: every experiment and kernel computation with
//! reproducible seeds and machine-readable output.
//!
//! Each run emits a JSON envelope `{config, results, seeds, timing}` to
//! stdout (and to `--out DIR` when given; `--csv` adds raw dumps). Exit
//! codes: 0 success, 2 when an experiment check failed its stated
//! tolerance, 1 for usage or I/O errors.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use sandpile_core::experiments::cone::{cone_certificate, cone_explode, exp_s0_line};
use sandpile_core::experiments::{
    exp_critical_clt, exp_density_conservation, exp_dirac_identity, exp_equality_in_law,
    exp_scaling, phi_d, psi_d, ExperimentReport, MassLaw,
};
use sandpile_core::field::{covariance, CholeskySampler, SpectralSampler};
use sandpile_core::graph::Graph;
use sandpile_core::green::{
    green_averaged, green_dirichlet_column, green_killed, nu_n, variogram_fourier,
};
use sandpile_core::numeric::neumaier_sum;
use sandpile_core::report::{field_csv, lag_csv, odometer_report_json, trials_csv};
use sandpile_core::rng::{standard_normal_field, trial_rng, Purpose};
use sandpile_core::sandpile::{solve_odometer_exact, topple_parallel, Configuration, ToppleParams};
use sandpile_core::stats::mean_se;

#[derive(Parser)]
#[command(
    name = "sandpile",
    about = "Divisible sandpile laboratory: toppling, Green kernels, bi-Laplacian fields, experiments",
    version
)]
struct Cli {
    /// Master seed; every randomized quantity derives from it.
    #[arg(long, global = true, default_value_t = 20150728)]
    seed: u64,
    /// Output directory for the JSON report (and CSVs with --csv).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write CSV dumps (fields, columns, per-trial statistics).
    #[arg(long, global = true)]
    csv: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Topple a configuration in parallel sweeps until stable.
    Stabilize {
        /// Torus side and dimension: --torus N D
        #[arg(long, num_args = 2, value_names = ["N", "D"])]
        torus: Option<Vec<usize>>,
        /// Dirichlet box radius and dimension: --box R D
        #[arg(long = "box", num_args = 2, value_names = ["R", "D"], allow_negative_numbers = true)]
        box_dims: Option<Vec<i64>>,
        /// Explicit comma-separated masses, one per vertex.
        #[arg(long)]
        mass: Option<String>,
        /// Draw i.i.d. masses from a law: gaussian:M,S | two_point:M,S | uniform:LO,HI
        #[arg(long)]
        mass_law: Option<String>,
        /// Critical Gaussian preset: s = 1 + sigma - mean(sigma).
        #[arg(long)]
        critical: bool,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 1_000_000)]
        max_sweeps: usize,
    },
    /// Exact odometer solve (total mass must equal the vertex count).
    OdometerExact {
        #[arg(long, num_args = 2, value_names = ["N", "D"])]
        torus: Vec<usize>,
        #[arg(long)]
        mass: Option<String>,
        #[arg(long)]
        critical: bool,
    },
    /// Green functions: killed/averaged tables or a killed box column.
    Green {
        /// killed | averaged | box
        #[arg(long)]
        mode: String,
        #[arg(long, num_args = 2, value_names = ["N", "D"])]
        torus: Option<Vec<usize>>,
        /// Killing vertex (linear index) for --mode killed.
        #[arg(long)]
        z: Option<usize>,
        /// Box radius and dimension for --mode box.
        #[arg(long = "box", num_args = 2, value_names = ["R", "D"])]
        box_dims: Option<Vec<i64>>,
    },
    /// Variogram of the bi-Laplacian field at one lag; prints E(eta_0-eta_x)^2.
    Variogram {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        /// Comma-separated lag coordinates.
        #[arg(long, allow_hyphen_values = true)]
        lag: String,
    },
    /// Sample the bi-Laplacian field and report max statistics.
    SampleField {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        /// spectral (min-shifted, any torus) | cholesky (raw, dense cap)
        #[arg(long, default_value = "spectral")]
        sampler: String,
        #[arg(long, default_value_t = 1)]
        trials: u64,
    },
    /// Equality in law: odometers vs min-shifted field samples.
    EqualityInLaw {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 2000)]
        trials: u64,
    },
    /// Odometer growth across torus sizes, fitted against phi_d.
    Scaling {
        #[arg(long)]
        d: usize,
        /// Comma-separated strictly increasing sizes.
        #[arg(long)]
        sizes: String,
        #[arg(long, default_value_t = 200)]
        trials: u64,
    },
    /// Central limit statistic on growing Dirichlet boxes.
    Clt {
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long)]
        radii: String,
        #[arg(long, default_value_t = 400)]
        trials: u64,
        #[arg(long, default_value = "two_point:1,1")]
        mass_law: String,
    },
    /// Dirac-mass toppling identity against the walk oracle.
    Dirac {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 50)]
        t_max: usize,
    },
    /// Conservation of density under a subcritical i.i.d. law.
    Density {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value = "uniform:0.4,1.4")]
        mass_law: String,
        #[arg(long, default_value_t = 500)]
        trials: u64,
    },
    /// Cone stabilization certificate for s = m 1_{C_a}.
    ConeCertify {
        /// Rational slope in (0,1], e.g. 1/2.
        #[arg(long)]
        a: String,
        #[arg(long)]
        m: f64,
        #[arg(long, default_value_t = 100)]
        radius: i64,
    },
    /// Nested-volume divergence probe for s = (1+alpha) 1_{C_1}.
    ConeExplode {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        radii: String,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Checks the line configuration s0(x,y) = x 1_{x>0, y=0}.
    S0Line {
        #[arg(long, default_value_t = 200)]
        radius: i64,
    },
    /// Growth orders: prints phi_d(n), and psi_d(n,r) when --r is given.
    Phi {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        r: Option<f64>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Ok(threads) = std::env::var("SANDPILE_THREADS") {
        match threads.parse::<usize>() {
            Ok(t) if t >= 1 => {
                let _ = sandpile_core::init_thread_pool(t);
            }
            _ => {
                eprintln!("SANDPILE_THREADS must be a positive integer");
                std::process::exit(1);
            }
        }
    }
    match run(cli) {
        Ok(true) => std::process::exit(0),
        Ok(false) => std::process::exit(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn parse_numbers<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| anyhow!("invalid {what} entry `{p}`"))
        })
        .collect()
}

fn build_graph(torus: &Option<Vec<usize>>, box_dims: &Option<Vec<i64>>) -> Result<Arc<Graph>> {
    match (torus, box_dims) {
        (Some(t), None) => Ok(Arc::new(Graph::torus(t[0], t[1])?)),
        (None, Some(b)) => Ok(Arc::new(Graph::dirichlet_box(b[0], b[1] as usize)?)),
        _ => bail!("specify exactly one of --torus N D or --box R D"),
    }
}

fn build_mass(
    graph: &Arc<Graph>,
    mass: &Option<String>,
    mass_law: &Option<String>,
    critical: bool,
    seed: u64,
) -> Result<Configuration> {
    let n = graph.vertex_count();
    let values = match (mass, mass_law, critical) {
        (Some(list), None, false) => {
            let v: Vec<f64> = parse_numbers(list, "mass")?;
            v
        }
        (None, Some(law), false) => {
            let law = MassLaw::parse(law)?;
            let mut rng = trial_rng(seed, Purpose::Generic, 0);
            (0..n).map(|_| law.sample(&mut rng)).collect()
        }
        (None, None, true) => {
            let mut rng = trial_rng(seed, Purpose::Generic, 0);
            let sigma = standard_normal_field(&mut rng, n);
            let mean = neumaier_sum(sigma.iter().copied()) / n as f64;
            sigma.iter().map(|&s| 1.0 + s - mean).collect()
        }
        _ => bail!("specify exactly one of --mass, --mass-law, or --critical"),
    };
    Ok(Configuration::new(Arc::clone(graph), values)?)
}

struct Emitter {
    out: Option<PathBuf>,
    csv: bool,
    seed: u64,
    clock: Instant,
}

impl Emitter {
    fn new(cli_out: Option<PathBuf>, csv: bool, seed: u64) -> Emitter {
        Emitter {
            out: cli_out,
            csv,
            seed,
            clock: Instant::now(),
        }
    }

    /// Assembles the envelope, prints it, writes files; returns nothing.
    fn emit(
        &self,
        name: &str,
        config: Value,
        results: Value,
        csvs: &[(&str, String)],
        quiet_stdout: bool,
    ) -> Result<()> {
        let envelope = json!({
            "config": config,
            "results": results,
            "seeds": { "master_seed": self.seed },
            "timing": { "wall_ms": self.clock.elapsed().as_millis() as u64 },
        });
        if !quiet_stdout {
            println!("{}", serde_json::to_string_pretty(&envelope)?);
        }
        if let Some(dir) = &self.out {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating output directory {}", dir.display()))?;
            let path = dir.join(format!("{name}_{}.json", self.seed));
            std::fs::write(&path, serde_json::to_string_pretty(&envelope)?)
                .with_context(|| format!("writing {}", path.display()))?;
            if self.csv {
                for (suffix, content) in csvs {
                    let path = dir.join(format!("{name}_{}_{suffix}.csv", self.seed));
                    std::fs::write(&path, content)
                        .with_context(|| format!("writing {}", path.display()))?;
                }
            }
        }
        Ok(())
    }
}

fn experiment_results(report: &ExperimentReport) -> Value {
    serde_json::to_value(report).expect("report serializes")
}

fn run(cli: Cli) -> Result<bool> {
    let seed = cli.seed;
    let em = Emitter::new(cli.out.clone(), cli.csv, seed);
    match cli.cmd {
        Cmd::Stabilize {
            torus,
            box_dims,
            mass,
            mass_law,
            critical,
            tol,
            max_sweeps,
        } => {
            let graph = build_graph(&torus, &box_dims)?;
            let cfg = build_mass(&graph, &mass, &mass_law, critical, seed)?;
            let params = ToppleParams {
                tol,
                max_sweeps,
                record_trace: false,
            };
            let report = topple_parallel(&cfg, &params)?;
            let mut results = odometer_report_json(&report);
            if graph.vertex_count() <= 4096 {
                results["odometer_values"] = json!(report.odometer);
            }
            let config = json!({
                "command": "stabilize",
                "torus": torus, "box": box_dims,
                "mass": mass, "mass_law": mass_law, "critical": critical,
                "tol": tol, "max_sweeps": max_sweeps,
            });
            let csvs = [
                ("odometer", field_csv(&graph, &report.odometer)),
                (
                    "final_config",
                    field_csv(&graph, report.final_config.values()),
                ),
            ];
            em.emit("stabilize", config, results, &csvs, false)?;
            Ok(true)
        }
        Cmd::OdometerExact {
            torus,
            mass,
            critical,
        } => {
            let graph = Arc::new(Graph::torus(torus[0], torus[1])?);
            let cfg = build_mass(&graph, &mass, &None, critical, seed)?;
            let u = solve_odometer_exact(&cfg)?;
            let lap = graph.laplacian_apply(&u)?;
            let residual = cfg
                .values()
                .iter()
                .zip(&lap)
                .map(|(&s, &l)| (s + l - 1.0).abs())
                .fold(0.0, f64::max);
            let mut results = json!({
                "min": u.iter().cloned().fold(f64::INFINITY, f64::min),
                "max": u.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                "residual_sup": residual,
            });
            if graph.vertex_count() <= 4096 {
                results["odometer_values"] = json!(u);
            }
            let config = json!({
                "command": "odometer-exact",
                "torus": torus, "mass": mass, "critical": critical,
            });
            let csvs = [("odometer", field_csv(&graph, &u))];
            em.emit("odometer_exact", config, results, &csvs, false)?;
            Ok(true)
        }
        Cmd::Green {
            mode,
            torus,
            z,
            box_dims,
        } => match mode.as_str() {
            "killed" | "averaged" => {
                let graph = build_graph(&torus, &None)?;
                let table = if mode == "killed" {
                    let z = z.ok_or_else(|| anyhow!("--mode killed needs --z"))?;
                    green_killed(&graph, z)?
                } else {
                    green_averaged(&graph)?
                };
                let k = table.k_values();
                let n = graph.vertex_count();
                let results = json!({
                    "mode": mode,
                    "vertices": n,
                    "k_min": k.iter().cloned().fold(f64::INFINITY, f64::min),
                    "k_max": k.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                });
                let mut csv = String::from("x,y,value\n");
                for x in 0..n {
                    for y in 0..n {
                        csv.push_str(&format!("{x},{y},{:.17e}\n", table.value(x, y)));
                    }
                }
                let config = json!({ "command": "green", "mode": mode, "torus": torus, "z": z });
                em.emit("green", config, results, &[("table", csv)], false)?;
                Ok(true)
            }
            "box" => {
                let dims = box_dims.ok_or_else(|| anyhow!("--mode box needs --box R D"))?;
                let (radius, d) = (dims[0], dims[1] as usize);
                let col = green_dirichlet_column(radius, d, &vec![0i64; d])?;
                let nu = nu_n(&col);
                let results = json!({
                    "mode": "box", "radius": radius, "d": d,
                    "nu": nu,
                    "g_origin": col.values[col.source],
                    "max": col.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                });
                let lags: Vec<Vec<i64>> = (0..col.values.len())
                    .map(|v| col.graph.coord(v).unwrap().coords)
                    .collect();
                let csv = lag_csv(&lags, &col.values);
                let config = json!({ "command": "green", "mode": "box", "box": dims });
                em.emit("green_box", config, results, &[("column", csv)], false)?;
                Ok(true)
            }
            other => bail!("unknown --mode `{other}` (killed | averaged | box)"),
        },
        Cmd::Variogram { n, d, lag } => {
            let lag: Vec<i64> = parse_numbers(&lag, "lag")?;
            let value = variogram_fourier(n, d, &lag)?;
            println!("{value}");
            let config = json!({ "command": "variogram", "n": n, "d": d, "lag": lag });
            // axis-lag table for the CSV dump
            let axis_lags: Vec<Vec<i64>> = (0..=(n / 2) as i64)
                .map(|k| {
                    let mut c = vec![0i64; d];
                    c[0] = k;
                    c
                })
                .collect();
            let axis_values: Vec<f64> = axis_lags
                .iter()
                .map(|c| variogram_fourier(n, d, c))
                .collect::<sandpile_core::Result<_>>()?;
            em.emit(
                "variogram",
                config,
                json!({ "variogram": value }),
                &[("axis_lags", lag_csv(&axis_lags, &axis_values))],
                true,
            )?;
            Ok(true)
        }
        Cmd::SampleField {
            n,
            d,
            sampler,
            trials,
        } => {
            let graph = Arc::new(Graph::torus(n, d)?);
            let mut first_sample: Option<Vec<f64>> = None;
            let maxima: Vec<f64> = match sampler.as_str() {
                "spectral" => {
                    let mut s = SpectralSampler::new(n, d)?;
                    (0..trials)
                        .map(|t| {
                            let f = s.sample(&mut trial_rng(seed, Purpose::FieldRoute, t))?;
                            if t == 0 {
                                first_sample = Some(f.values.clone());
                            }
                            Ok(f.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                        })
                        .collect::<Result<_>>()?
                }
                "cholesky" => {
                    let table = green_averaged(&graph)?;
                    let model = covariance(&table)?;
                    let chol = CholeskySampler::new(&model)?;
                    (0..trials)
                        .map(|t| {
                            let f = chol.sample(&mut trial_rng(seed, Purpose::FieldRoute, t));
                            if t == 0 {
                                first_sample = Some(f.values.clone());
                            }
                            f.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                        })
                        .collect()
                }
                other => bail!("unknown --sampler `{other}` (spectral | cholesky)"),
            };
            let results = if trials >= 2 {
                let (mean, se) = mean_se(&maxima);
                json!({ "sampler": sampler, "trials": trials,
                        "expected_max": mean, "se": se })
            } else {
                json!({ "sampler": sampler, "trials": trials, "max": maxima[0] })
            };
            let config = json!({ "command": "sample-field", "n": n, "d": d,
                                 "sampler": sampler, "trials": trials });
            let mut csvs: Vec<(&str, String)> = vec![("maxima", trials_csv(&maxima))];
            if let Some(sample) = &first_sample {
                csvs.push(("sample0", field_csv(&graph, sample)));
            }
            em.emit("sample_field", config, results, &csvs, false)?;
            Ok(true)
        }
        Cmd::EqualityInLaw { n, d, trials } => {
            let report = exp_equality_in_law(n, d, trials, seed)?;
            let config = json!({ "command": "equality-in-law", "n": n, "d": d, "trials": trials });
            let pvalues = report.ks_pvalues.clone().unwrap_or_default();
            em.emit(
                "equality_in_law",
                config,
                experiment_results(&report),
                &[("ks_pvalues", trials_csv(&pvalues))],
                false,
            )?;
            Ok(report.passed())
        }
        Cmd::Scaling { d, sizes, trials } => {
            let sizes: Vec<usize> = parse_numbers(&sizes, "sizes")?;
            let (table, report) = exp_scaling(d, &sizes, trials, seed)?;
            let config = json!({ "command": "scaling", "d": d, "sizes": sizes, "trials": trials });
            let rows: Vec<f64> = table.rows.iter().map(|r| r.mean_odometer).collect();
            em.emit(
                "scaling",
                config,
                experiment_results(&report),
                &[("means", trials_csv(&rows))],
                false,
            )?;
            Ok(report.passed())
        }
        Cmd::Clt {
            d,
            radii,
            trials,
            mass_law,
        } => {
            let radii: Vec<i64> = parse_numbers(&radii, "radii")?;
            let law = MassLaw::parse(&mass_law)?;
            let report = exp_critical_clt(d, &radii, trials, law, seed)?;
            let config = json!({ "command": "clt", "d": d, "radii": radii,
                                 "trials": trials, "mass_law": mass_law });
            em.emit("clt", config, experiment_results(&report), &[], false)?;
            Ok(report.passed())
        }
        Cmd::Dirac { n, d, beta, t_max } => {
            let report = exp_dirac_identity(n, d, beta, t_max)?;
            let config = json!({ "command": "dirac", "n": n, "d": d,
                                 "beta": beta, "t_max": t_max });
            em.emit("dirac", config, experiment_results(&report), &[], false)?;
            Ok(report.passed())
        }
        Cmd::Density {
            n,
            d,
            mass_law,
            trials,
        } => {
            let law = MassLaw::parse(&mass_law)?;
            let report = exp_density_conservation(n, d, law, trials, seed)?;
            let config = json!({ "command": "density", "n": n, "d": d,
                                 "mass_law": mass_law, "trials": trials });
            em.emit("density", config, experiment_results(&report), &[], false)?;
            Ok(report.passed())
        }
        Cmd::ConeCertify { a, m, radius } => {
            let (num, den) = a
                .split_once('/')
                .map(|(p, q)| (p.parse::<i64>(), q.parse::<i64>()))
                .map(|(p, q)| p.and_then(|p| q.map(|q| (p, q))))
                .unwrap_or_else(|| a.parse::<i64>().map(|p| (p, 1)))
                .map_err(|_| anyhow!("slope `{a}` must look like 1/2 or 1"))?;
            let report = cone_certificate(num, den, m, radius)?;
            let config = json!({ "command": "cone-certify", "a": a, "m": m, "radius": radius });
            em.emit(
                "cone_certify",
                config,
                experiment_results(&report),
                &[],
                false,
            )?;
            Ok(report.passed())
        }
        Cmd::ConeExplode { alpha, radii, tol } => {
            let radii: Vec<i64> = parse_numbers(&radii, "radii")?;
            let report = cone_explode(alpha, &radii, tol)?;
            let config = json!({ "command": "cone-explode", "alpha": alpha,
                                 "radii": radii, "tol": tol });
            em.emit(
                "cone_explode",
                config,
                experiment_results(&report),
                &[],
                false,
            )?;
            Ok(report.passed())
        }
        Cmd::S0Line { radius } => {
            let report = exp_s0_line(radius)?;
            let config = json!({ "command": "s0-line", "radius": radius });
            em.emit("s0_line", config, experiment_results(&report), &[], false)?;
            Ok(report.passed())
        }
        Cmd::Phi { d, n, r } => {
            let phi = phi_d(d, n)?;
            println!("{phi}");
            let psi = match r {
                Some(r) => {
                    let v = psi_d(d, n, r)?;
                    println!("{v}");
                    Some(v)
                }
                None => None,
            };
            let config = json!({ "command": "phi", "d": d, "n": n, "r": r });
            em.emit("phi", config, json!({ "phi": phi, "psi": psi }), &[], true)?;
            Ok(true)
        }
    }
}
