use std::collections::BTreeMap;
use std::path::Path;

use clap::ValueEnum;
use kcl_core::bounds::{
    check_classification_bound, check_decomposition, check_equality_case, check_generalization, check_normalized_cut, check_surrogate,
    estimate_rademacher, gen_bound, random_partition, stream_rng, GenBoundConfig, ProxyClass,
};
use kcl_core::encoders::{Checkpoint, Encoder, MlpEncoder, Trainable};
use kcl_core::geometry::{cluster_geometry, mean_classifier_error};
use kcl_core::objectives::{
    check_loss_relations, empirical_kcl, info_nce, population_kcl, spectral_contrastive, NceVariant, NegativeSampling,
};
use kcl_core::similarity::{max_admissible_delta, verify_assumption, AssumptionReport};
use kcl_core::trainer::{lambda_sweep, sweep_to_csv, train};
use kcl_core::worlds::{sample_positive_pairs, BallWorldSpec};
use kcl_core::{BoundReport, ClusterStructure, Error, FiniteWorld, InfoNceConfig, Kernel, TableEncoder, TrainConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{parse_kernel, resolve_seed, resolve_world, DeltaArg, RunConfig};
use crate::{
    BoundKind, BoundsArgs, CliError, Command, Common, EncodedArgs, Format, GeometryCmd, LossArgs, LossCmd, LossKind, ModelKind, NceArgs,
    Outcome, RelationsArgs, RelationsCmd, SimCmd, SweepCmd, TrainArgs, TrainOpts, VariantArg, WorldBuildArgs, WorldCmd, WorldKind,
};

pub fn run(command: Command) -> Result<Outcome, CliError> {
    match command {
        Command::World(WorldCmd::Build(a)) => world_build(a),
        Command::World(WorldCmd::Validate { path }) => world_validate(&path),
        Command::Sim(SimCmd::Check(c)) => sim_check(c),
        Command::Loss(LossCmd::Eval(a)) => loss_eval(a),
        Command::Relations(RelationsCmd::Check(a)) => relations_check(a),
        Command::Geometry(GeometryCmd::Report(a)) => geometry_report(a),
        Command::Bounds(a) => bounds(a),
        Command::Train(a) => train_cmd(a),
        Command::Sweep(SweepCmd::Lambda(a)) => sweep_lambda(a),
    }
}

/// World, kernel and structure resolved from the common flags.
struct Setup {
    world: FiniteWorld,
    kernel: Kernel,
    config: RunConfig,
}

impl Setup {
    fn new(command: &str, c: &Common, format: Format) -> Result<Self, CliError> {
        let world = resolve_world(&c.world)?;
        let kernel_spec = parse_kernel(&c.kernel)?;
        let kernel = Kernel::from_spec(&kernel_spec)?;
        let seed = resolve_seed(c.seed)?;
        let (delta_mode, delta) = match c.delta {
            DeltaArg::Value(v) => (v.to_string(), Some(v)),
            DeltaArg::Auto if world.has_clusters() => ("auto".to_string(), Some(max_admissible_delta(&world, world.clusters(), c.lambda)?)),
            DeltaArg::Auto => ("auto".to_string(), None),
        };
        let config = RunConfig {
            command: command.to_string(),
            world: c.world.clone(),
            kernel: kernel.spec().to_string(),
            lambda: c.lambda,
            delta_mode,
            delta,
            seed,
            output: c.report.as_ref().map(|p| p.display().to_string()),
            format: format.name().to_string(),
            params: BTreeMap::new(),
        };
        Ok(Self { world, kernel, config })
    }

    fn structure(&self) -> Result<ClusterStructure, CliError> {
        match self.config.delta {
            Some(d) => Ok(ClusterStructure::new(&self.world, self.config.lambda, d)),
            None => Err(CliError::Usage("world has no cluster structure".into())),
        }
    }

    fn encoder(&mut self, args: &crate::EncoderArgs) -> Result<Checkpoint<f64>, CliError> {
        match &args.encoder {
            Some(path) => {
                self.config = self.config.clone().param("encoder", path.display().to_string());
                let text = std::fs::read_to_string(path)?;
                let ckpt: Checkpoint<f64> = serde_json::from_str(&text).map_err(Error::from)?;
                ckpt.embed(&self.world)?;
                Ok(ckpt)
            }
            None => {
                self.config = self.config.clone().param("encoder", format!("random-table:dim={}", args.dim));
                if args.dim == 0 {
                    return Err(CliError::Usage("--dim must be at least 1".into()));
                }
                Ok(Checkpoint::Table(TableEncoder::random(self.world.len(), args.dim, &mut stream_rng(self.config.seed, 0))))
            }
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json(path: Option<&Path>, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    emit(path, &text)
}

fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn value_name(v: impl ValueEnum) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn config_comment(config: &RunConfig) -> String {
    format!("# config: {}\n", serde_json::to_string(config).expect("config serializes"))
}

fn world_build(a: WorldBuildArgs) -> Result<Outcome, CliError> {
    let spec = match a.kind {
        WorldKind::DisjointBalls => BallWorldSpec::disjoint(a.k, a.resolution),
        WorldKind::OverlapBalls => BallWorldSpec::overlap(a.resolution),
    };
    let world: FiniteWorld = spec.build()?;
    let mut text = world.to_json()?;
    text.push('\n');
    emit(a.report.as_deref(), &text)?;
    Ok(Outcome { pass: true })
}

fn world_validate(path: &Path) -> Result<Outcome, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("world file {} does not exist", path.display())));
    }
    let world: FiniteWorld = kcl_core::worlds::load_world(path)?;
    emit_json(
        None,
        &json!({
            "path": path.display().to_string(),
            "valid": true,
            "points": world.len(),
            "clusters": world.clusters().len(),
            "cluster_masses": world.masses(),
        }),
    )?;
    Ok(Outcome { pass: true })
}

/// Emits the assumption report and returns `Some(outcome)` when it fails.
fn assumption_gate(setup: &Setup, structure: &ClusterStructure, path: Option<&Path>) -> Result<Option<Outcome>, CliError> {
    let report = verify_assumption(&setup.world, structure)?;
    if report.pass {
        return Ok(None);
    }
    emit_json(path, &assumption_failure(&setup.config, &report))?;
    Ok(Some(Outcome { pass: false }))
}

fn assumption_failure(config: &RunConfig, report: &AssumptionReport) -> Value {
    json!({
        "config": config,
        "pass": false,
        "assumption": report,
        "failing_conditions": report.failing_conditions(),
    })
}

fn sim_check(c: Common) -> Result<Outcome, CliError> {
    let setup = Setup::new("sim check", &c, Format::Json)?;
    let structure = setup.structure()?;
    let report = verify_assumption(&setup.world, &structure)?;
    let value = json!({
        "config": setup.config,
        "pass": report.pass,
        "assumption": report,
        "failing_conditions": report.failing_conditions(),
    });
    emit_json(c.report.as_deref(), &value)?;
    Ok(Outcome { pass: report.pass })
}

fn variant(v: VariantArg) -> NceVariant {
    match v {
        VariantArg::Standard => NceVariant::Standard,
        VariantArg::Decoupled => NceVariant::Decoupled,
        VariantArg::Asymptotic => NceVariant::Asymptotic,
        VariantArg::Dcl => NceVariant::Dcl,
    }
}

fn sampling(n: &NceArgs, seed: u64) -> NegativeSampling {
    NegativeSampling { samples: n.samples, seed, ..NegativeSampling::default() }
}

fn loss_eval(a: LossArgs) -> Result<Outcome, CliError> {
    let mut setup = Setup::new("loss eval", &a.base.common, a.format)?;
    let enc = setup.encoder(&a.base.encoder)?;
    let lambda = setup.config.lambda;
    let mut rows: Vec<(String, kcl_core::LossValue)> = Vec::new();
    match a.loss {
        LossKind::Kcl => {
            rows.push(("kcl".into(), population_kcl(&setup.world, &enc, &setup.kernel, lambda)?));
            if let Some(n) = a.pairs {
                let pairs = sample_positive_pairs(&setup.world, n, setup.config.seed)?;
                rows.push(("kcl-empirical".into(), empirical_kcl(&setup.world, &pairs, &enc, &setup.kernel, lambda)?));
                setup.config = setup.config.clone().param("pairs", n);
            }
        }
        LossKind::Nce => {
            let cfg = InfoNceConfig::new(a.nce.tau, a.nce.m, lambda)?;
            let v = info_nce(&setup.world, &enc, &cfg, variant(a.variant), &sampling(&a.nce, setup.config.seed))?;
            rows.push((format!("nce-{}", to_value(variant(a.variant)).as_str().unwrap_or("standard")), v));
            setup.config = setup.config.clone().param("tau", a.nce.tau).param("m", a.nce.m).param("samples", a.nce.samples);
        }
        LossKind::Scl => rows.push(("scl".into(), spectral_contrastive(&setup.world, &enc)?)),
    }
    let path = a.base.common.report.as_deref();
    match a.format {
        Format::Json => {
            let losses: BTreeMap<String, Value> = rows.iter().map(|(k, v)| (k.clone(), to_value(v))).collect();
            emit_json(path, &json!({ "config": setup.config, "losses": losses }))?;
        }
        Format::Csv => {
            let mut text = config_comment(&setup.config);
            text.push_str("loss,value,positive_term,negative_term,half_width\n");
            for (name, v) in &rows {
                text.push_str(&format!("{name},{},{},{},{}\n", v.value, v.positive_term, v.negative_term, v.estimator.half_width()));
            }
            emit(path, &text)?;
        }
    }
    Ok(Outcome { pass: true })
}

fn relations_check(a: RelationsArgs) -> Result<Outcome, CliError> {
    let mut setup = Setup::new("relations check", &a.base.common, a.format)?;
    let enc = setup.encoder(&a.base.encoder)?;
    setup.config = setup.config.clone().param("tau", a.nce.tau).param("m", a.nce.m).param("samples", a.nce.samples);
    let cfg = InfoNceConfig::new(a.nce.tau, a.nce.m, setup.config.lambda)?;
    let emb = enc.embed(&setup.world)?;
    let reports = check_loss_relations(&setup.world, &emb, &cfg, &sampling(&a.nce, setup.config.seed));
    let pass = reports.iter().all(|r| r.pass);
    let path = a.base.common.report.as_deref();
    match a.format {
        Format::Json => emit_json(path, &json!({ "config": setup.config, "pass": pass, "reports": reports }))?,
        Format::Csv => {
            let mut text = config_comment(&setup.config);
            text.push_str("relation,lhs,rhs,slack,estimator,pass\n");
            for r in &reports {
                let estimator =
                    if r.estimator_noise == 0.0 { "exact".to_string() } else { format!("monte-carlo:half_width={}", r.estimator_noise) };
                text.push_str(&format!("{},{},{},{},{},{}\n", r.name, r.lhs, r.rhs, r.slack, estimator, r.pass));
            }
            emit(path, &text)?;
        }
    }
    Ok(Outcome { pass })
}

fn geometry_report(a: EncodedArgs) -> Result<Outcome, CliError> {
    let mut setup = Setup::new("geometry report", &a.common, Format::Json)?;
    let enc = setup.encoder(&a.encoder)?;
    let structure = setup.structure()?;
    let g = cluster_geometry(&setup.world, &enc, &setup.kernel, &structure)?;
    let error = if structure.k() >= 2 { Some(mean_classifier_error(&setup.world, &enc, &setup.kernel, &structure)?) } else { None };
    let value = json!({
        "config": setup.config,
        "mu_gram": g.mu_gram,
        "a": g.a_value,
        "c": g.c_value,
        "delta_min": g.delta_min,
        "error": error,
        "masses": g.masses,
    });
    emit_json(a.common.report.as_deref(), &value)?;
    Ok(Outcome { pass: true })
}

fn gen_config(setup: &Setup, g: &crate::GenArgs, dim: usize) -> GenBoundConfig {
    GenBoundConfig {
        n: g.n,
        epsilon: g.epsilon,
        lambda: setup.config.lambda,
        rademacher_draws: g.draws,
        permutation_samples: g.permutations,
        class_size: g.class_size,
        dim,
        seed: setup.config.seed,
    }
}

/// A check that either ran or was skipped because its hypotheses do not hold.
enum Checked {
    Ran(Vec<BoundReport>, Option<Value>),
    Skipped(String),
}

fn bounds(a: BoundsArgs) -> Result<Outcome, CliError> {
    let name = format!("bounds {}", value_name(a.which));
    let mut setup = Setup::new(&name, &a.base.common, Format::Json)?;
    let enc = setup.encoder(&a.base.encoder)?;
    let path = a.base.common.report.as_deref();
    let needs_structure = !matches!(a.which, BoundKind::Generalization | BoundKind::Ncut);
    let structure = if needs_structure { Some(setup.structure()?) } else { setup.structure().ok() };
    if needs_structure {
        if let Some(out) = assumption_gate(&setup, structure.as_ref().expect("checked above"), path)? {
            return Ok(out);
        }
    }
    let kinds: Vec<BoundKind> = match a.which {
        BoundKind::All => vec![
            BoundKind::Decomposition,
            BoundKind::Equality,
            BoundKind::Classification,
            BoundKind::Generalization,
            BoundKind::Surrogate,
            BoundKind::Ncut,
        ],
        k => vec![k],
    };
    let single = kinds.len() == 1;
    let emb = enc.embed(&setup.world)?;
    let mut sections = BTreeMap::new();
    let mut pass = true;
    for kind in kinds {
        let key = value_name(kind);
        let checked = match kind {
            BoundKind::Decomposition => {
                Checked::Ran(vec![check_decomposition(&setup.world, &emb, &setup.kernel, structure.as_ref().expect("gated"))?], None)
            }
            BoundKind::Equality => match check_equality_case(&setup.world, &emb, &setup.kernel, structure.as_ref().expect("gated")) {
                Ok(r) => Checked::Ran(vec![r], None),
                Err(Error::Hypothesis(failed)) => Checked::Skipped(failed.join("; ")),
                Err(e) => return Err(e.into()),
            },
            BoundKind::Classification => {
                match check_classification_bound(&setup.world, &emb, &setup.kernel, structure.as_ref().expect("gated")) {
                    Ok(r) => Checked::Ran(vec![r], None),
                    Err(e @ (Error::NotMeaningful { .. } | Error::TooFewClusters(_))) => Checked::Skipped(e.to_string()),
                    Err(e) => return Err(e.into()),
                }
            }
            BoundKind::Generalization => {
                let cfg = gen_config(&setup, &a.gen, a.base.encoder.dim);
                setup.config = setup.config.clone().param("generalization", &cfg).param("trials", a.gen.trials);
                let out = check_generalization(&setup.world, &setup.kernel, &cfg, a.gen.trials)?;
                let extra = json!({ "rademacher": out.rademacher, "gen": out.gen, "gen_conservative": out.gen_conservative });
                Checked::Ran(vec![out.report], Some(extra))
            }
            BoundKind::Surrogate => surrogate(&mut setup, &a, structure.as_ref().expect("gated"))?,
            BoundKind::Ncut => {
                let gram = emb.gram(&setup.kernel);
                let mut cells: Vec<Vec<Vec<usize>>> = Vec::new();
                if is_partition(setup.world.clusters(), setup.world.len()) {
                    cells.push(setup.world.clusters().to_vec());
                }
                let k = setup.world.clusters().len().clamp(2, setup.world.len().max(2));
                let mut rng = stream_rng(setup.config.seed, 7);
                for _ in 0..a.partitions {
                    cells.push(random_partition(setup.world.len(), k.min(setup.world.len()), &mut rng));
                }
                setup.config = setup.config.clone().param("partitions", a.partitions);
                let mut reports = Vec::new();
                for c in &cells {
                    let (trace, identity) = check_normalized_cut(&setup.world, &gram, setup.config.lambda, c)?;
                    reports.push(trace);
                    reports.push(identity);
                }
                Checked::Ran(reports, None)
            }
            BoundKind::All => unreachable!("expanded above"),
        };
        let section = match checked {
            Checked::Ran(reports, extra) => {
                let ok = reports.iter().all(|r| r.pass);
                pass &= ok;
                let mut v = json!({ "pass": ok, "reports": reports });
                if let Some(Value::Object(extra)) = extra {
                    v.as_object_mut().expect("object").extend(extra);
                }
                v
            }
            Checked::Skipped(reason) => {
                // Asked for explicitly, an inapplicable check is a failed check.
                pass &= !single;
                json!({ "pass": !single, "skipped": reason })
            }
        };
        sections.insert(key, section);
    }
    emit_json(path, &json!({ "config": setup.config, "pass": pass, "checks": sections }))?;
    Ok(Outcome { pass })
}

fn is_partition(clusters: &[Vec<usize>], n: usize) -> bool {
    let mut seen = vec![false; n];
    for c in clusters {
        for &x in c {
            if seen[x] {
                return false;
            }
            seen[x] = true;
        }
    }
    !clusters.is_empty() && seen.iter().all(|&s| s)
}

fn surrogate(setup: &mut Setup, a: &BoundsArgs, structure: &ClusterStructure) -> Result<Checked, CliError> {
    let cfg = TrainConfig {
        steps: a.steps,
        lambda: setup.config.lambda,
        seed: setup.config.seed,
        kernel: setup.kernel.spec(),
        ..TrainConfig::default()
    };
    let init = TableEncoder::random(setup.world.len(), a.base.encoder.dim, &mut stream_rng(setup.config.seed, 1));
    let (trained, _) = train(&setup.world, &init, &cfg)?;
    let emb = trained.embed(&setup.world)?;
    let gcfg = gen_config(setup, &a.gen, a.base.encoder.dim);
    setup.config = setup.config.clone().param("surrogate_train", &cfg).param("surrogate_generalization", &gcfg);
    let class = ProxyClass::random_tables(&setup.world, gcfg.class_size, gcfg.dim, gcfg.seed)?;
    let rad = estimate_rademacher(&setup.world, &class, &gcfg)?;
    let gen = gen_bound(&setup.kernel, gcfg.n, gcfg.lambda, gcfg.epsilon, rad.r_plus, rad.r_minus);
    match check_surrogate(&setup.world, &setup.kernel, structure, gen.total, &emb, &emb) {
        Ok(r) => Ok(Checked::Ran(vec![r.with_note("reference encoder is the trained encoder")], Some(json!({ "gen": gen })))),
        Err(e @ (Error::NotMeaningful { .. } | Error::TooFewClusters(_))) => Ok(Checked::Skipped(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn train_config(setup: &Setup, opts: &TrainOpts) -> TrainConfig {
    TrainConfig {
        steps: opts.steps,
        lr: opts.lr,
        batch_n: opts.batch,
        lambda: setup.config.lambda,
        seed: setup.config.seed,
        kernel: setup.kernel.spec(),
        track_every: opts.track_every,
    }
}

fn train_cmd(a: TrainArgs) -> Result<Outcome, CliError> {
    let mut setup = Setup::new("train", &a.common, Format::Csv)?;
    let cfg = train_config(&setup, &a.opts);
    let mut init_rng = stream_rng(setup.config.seed, 1);
    let (checkpoint, trace) = match a.model {
        ModelKind::Table => {
            let init = TableEncoder::random(setup.world.len(), a.opts.dim, &mut init_rng);
            run_train(&setup.world, init, &cfg, Checkpoint::Table)?
        }
        ModelKind::Mlp => {
            let hidden: Vec<usize> = a
                .hidden
                .split(',')
                .map(|h| h.trim().parse().map_err(|_| CliError::Usage(format!("hidden width '{h}' is not an integer"))))
                .collect::<Result<_, _>>()?;
            let input = setup.world.points().first().map_or(0, |p| p.coords.len());
            let init = MlpEncoder::random(input, &hidden, a.opts.dim, &mut init_rng);
            run_train(&setup.world, init, &cfg, Checkpoint::Mlp)?
        }
    };
    setup.config = setup.config.clone().param("train", &cfg).param("model", value_name(a.model));
    if let Some(p) = &a.checkpoint {
        let mut text = serde_json::to_string_pretty(&checkpoint).map_err(Error::from)?;
        text.push('\n');
        std::fs::write(p, text)?;
    }
    let mut text = config_comment(&setup.config);
    text.push_str(&trace.to_csv()?);
    emit(a.common.report.as_deref(), &text)?;
    Ok(Outcome { pass: true })
}

fn run_train<E: Trainable<f64>>(
    world: &FiniteWorld,
    init: E,
    cfg: &TrainConfig,
    wrap: fn(E) -> Checkpoint<f64>,
) -> Result<(Checkpoint<f64>, kcl_core::TrainTrace), CliError> {
    let (trained, trace) = train(world, &init, cfg)?;
    Ok((wrap(trained), trace))
}

fn sweep_lambda(a: crate::SweepArgs) -> Result<Outcome, CliError> {
    let mut setup = Setup::new("sweep lambda", &a.common, a.format)?;
    let cfg = train_config(&setup, &a.opts);
    setup.config = setup.config.clone().param("train", &cfg).param("values", &a.values).param("dim", a.opts.dim);
    let rows = lambda_sweep(&setup.world, &a.values, a.opts.dim, &cfg)?;
    let path = a.common.report.as_deref();
    match a.format {
        Format::Csv => {
            let mut text = config_comment(&setup.config);
            text.push_str(&sweep_to_csv(&rows)?);
            emit(path, &text)?;
        }
        Format::Json => emit_json(path, &json!({ "config": setup.config, "rows": rows }))?,
    }
    Ok(Outcome { pass: true })
}
