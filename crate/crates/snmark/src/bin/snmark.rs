//! Command-line front end: train and protect models, run the registry
//! workflow, serve predictions, verify ownership remotely, simulate attacks
//! and reproduce the experiment tables.

use clap::{Args, Parser, Subcommand};
use snmark::checkpoint::{self, CheckpointMeta};
use snmark::crypto::{self, CaRecord, CaRegistry, OwnerToken, SerialNumber, TrapdoorParams};
use snmark::experiments::{
    run_curves, run_table1, run_table2, run_table3, write_report, ExperimentContext, Profile,
};
use snmark::mnist::Dataset;
use snmark::network::accuracy;
use snmark::prune::{prune_with_finetune, sparsity_report, PruneSchedule};
use snmark::service::{attack_forge_label, attack_forge_sn, serve_checkpoint, verify_remote};
use snmark::watermark::{
    embed, encode_sn_to_targets, extract_sn, make_triggers, train, EmbedConfig, EvalHooks,
    SnQuantizer, TrainData, TriggerSet,
};
use snmark::zoo::{build_scaled, ArchitectureId};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "snmark", version, about = "Serial-number watermarking toolkit for neural networks")]
struct Cli {
    /// Base seed for every stochastic choice.
    #[arg(long, global = true, default_value_t = 17)]
    seed: u64,

    /// JSON file overriding experiment profile fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Force the deterministic execution mode. This build is always
    /// deterministic (single-threaded numeric kernels, seeded randomness),
    /// so the flag only asserts the contract.
    #[arg(long, global = true, default_value_t = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the four standard IDX files.
    #[arg(long, default_value_os_t = Dataset::default_dir())]
    data_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a plain classifier and write a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// teacher | wider | deeper
        #[arg(long, default_value = "teacher")]
        arch: String,
        #[arg(long, default_value_t = 6)]
        epochs: usize,
        /// Divide all hidden widths by this factor (1 = paper scale).
        #[arg(long, default_value_t = 1)]
        width_divisor: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate trapdoor parameters and write them to a JSON key file.
    Keygen {
        #[arg(long, default_value_t = 2048)]
        bits: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive a serial number for an owner/model pair and file it with the
    /// registry.
    Register {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        owner: String,
        #[arg(long)]
        model_name: String,
        #[arg(long, default_value_t = 0)]
        nonce: u64,
        #[arg(long)]
        registry: PathBuf,
    },
    /// Embed a registered serial number into a model by alternate training.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "teacher")]
        arch: String,
        #[arg(long, default_value_t = 1)]
        width_divisor: usize,
        #[arg(long, default_value_t = 6)]
        epochs: usize,
        #[arg(long, default_value_t = 2)]
        trigger_ratio: usize,
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        owner: String,
        #[arg(long)]
        model_name: String,
        #[arg(long, default_value_t = 0)]
        nonce: u64,
        #[arg(long)]
        registry: PathBuf,
        /// Seed of the owner-secret trigger images.
        #[arg(long, default_value_t = 1001)]
        trigger_seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the trigger set (owner secret) next to the checkpoint.
        #[arg(long)]
        triggers_out: Option<PathBuf>,
    },
    /// Read the serial a checkpoint expresses on a trigger set.
    ExtractSn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        triggers: PathBuf,
    },
    /// Verify ownership of a served model against the registry.
    Verify {
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        triggers: PathBuf,
        /// Claimed serial, hyphen-grouped hex digits.
        #[arg(long)]
        sn: String,
        #[arg(long)]
        registry: PathBuf,
        /// Trapdoor key file; defaults to the filed parameters of the claimed
        /// serial.
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Magnitude-prune a checkpoint with fine-tuning.
    Prune {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sparsity: f64,
        #[arg(long, default_value_t = 430)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a checkpoint over HTTP (POST /predict, GET /health).
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        address: String,
    },
    /// Run the label-forgery or serial-forgery simulator against an endpoint.
    AttackSim {
        #[arg(long)]
        endpoint: String,
        /// label | sn
        #[arg(long, default_value = "sn")]
        strategy: String,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Reproduce the experiment tables and learning curves.
    Report {
        #[command(flatten)]
        data: DataArgs,
        /// full | ci
        #[arg(long, default_value = "full")]
        profile: String,
        /// 1 | 2 | 3 | curves | all
        #[arg(long, default_value = "all")]
        table: String,
        #[arg(long, default_value = "reports")]
        out_dir: PathBuf,
        /// Cache trained checkpoints here across runs.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Add the two random baselines to the pruning grid.
        #[arg(long, default_value_t = false)]
        full_table3: bool,
    },
}

fn parse_arch(name: &str) -> Result<ArchitectureId, String> {
    match name {
        "teacher" => Ok(ArchitectureId::Teacher),
        "wider" => Ok(ArchitectureId::Wider),
        "deeper" => Ok(ArchitectureId::Deeper),
        other => Err(format!("unknown architecture '{other}' (teacher|wider|deeper)")),
    }
}

fn load_keys(path: &PathBuf) -> snmark::Result<TrapdoorParams> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn resolve_profile(name: &str, seed: u64, config: &Option<PathBuf>) -> snmark::Result<Profile> {
    let mut profile = match name {
        "full" => Profile::full(),
        "ci" => Profile::ci(),
        other => return Err(snmark::Error::Config(format!("unknown profile '{other}' (full|ci)"))),
    };
    profile.seed = seed;
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)?;
        let mut base = serde_json::to_value(&profile)?;
        let overrides: serde_json::Value = serde_json::from_str(&text)?;
        if let (Some(base_map), Some(over_map)) = (base.as_object_mut(), overrides.as_object()) {
            for (k, v) in over_map {
                base_map.insert(k.clone(), v.clone());
            }
        }
        profile = serde_json::from_value(base)?;
    }
    Ok(profile)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> snmark::Result<()> {
    match cli.command {
        Command::Train { data, arch, epochs, width_divisor, out } => {
            let arch = parse_arch(&arch).map_err(snmark::Error::Config)?;
            let ds = Dataset::load(&data.data_dir)?;
            let net = build_scaled::<f32>(arch, width_divisor, cli.seed);
            let cfg = EmbedConfig {
                epochs,
                trigger_ratio: 0,
                seed: cli.seed,
                verbose: true,
                ..Default::default()
            };
            let hooks = EvalHooks {
                validation: Some((&ds.val_images, &ds.val_labels)),
                train_probe: None,
            };
            let run = train(
                net,
                TrainData { images: &ds.train_images, labels: &ds.train_labels },
                None,
                &cfg,
                hooks,
            )?;
            let test_acc = accuracy(&run.network, &ds.test_images, &ds.test_labels, 512)?;
            println!("test accuracy: {:.2}%", test_acc * 100.0);
            let meta = CheckpointMeta {
                tag: format!("{arch:?}"),
                seed: cli.seed,
                epoch: epochs,
                test_accuracy: Some(test_acc),
                val_accuracy: run.history.last().and_then(|h| h.val_acc),
                sn_digit_accuracy: None,
            };
            checkpoint::save(&run.network, &meta, &out)?;
            println!("checkpoint written to {}", out.display());
        }

        Command::Keygen { bits, out } => {
            let params = crypto::keygen(bits, cli.seed)?;
            std::fs::write(&out, serde_json::to_string_pretty(&params)?)?;
            println!("{}-bit trapdoor parameters written to {}", params.bits(), out.display());
        }

        Command::Register { keys, owner, model_name, nonce, registry } => {
            let params = load_keys(&keys)?;
            let token = OwnerToken::new(&owner, &model_name, nonce, &params)?;
            let sn = crypto::sn_generate(
                &token,
                &params,
                crypto::DEFAULT_SN_BASE,
                crypto::DEFAULT_SN_DIGITS,
            )?;
            let mut registry = CaRegistry::open(&registry)?;
            let receipt =
                registry.register(CaRecord::new(&owner, &model_name, &token, &params, &sn)?)?;
            println!("serial: {sn}");
            println!("filed as entry {} at {}", receipt.entry, receipt.registered_at);
        }

        Command::Embed {
            data,
            arch,
            width_divisor,
            epochs,
            trigger_ratio,
            keys,
            owner,
            model_name,
            nonce,
            registry,
            trigger_seed,
            out,
            triggers_out,
        } => {
            let arch = parse_arch(&arch).map_err(snmark::Error::Config)?;
            let ds = Dataset::load(&data.data_dir)?;
            let params = load_keys(&keys)?;
            let token = OwnerToken::new(&owner, &model_name, nonce, &params)?;
            let sn = crypto::sn_generate(
                &token,
                &params,
                crypto::DEFAULT_SN_BASE,
                crypto::DEFAULT_SN_DIGITS,
            )?;
            let mut reg = CaRegistry::open(&registry)?;
            if reg.lookup(&sn).is_none() {
                reg.register(CaRecord::new(&owner, &model_name, &token, &params, &sn)?)?;
                println!("serial filed with the registry");
            }
            let quant = SnQuantizer::default();
            let triggers = make_triggers(trigger_seed, crypto::DEFAULT_SN_DIGITS / 10);
            let targets = encode_sn_to_targets(&sn, quant, triggers.count())?;
            let net = build_scaled::<f32>(arch, width_divisor, cli.seed);
            let cfg = EmbedConfig {
                epochs,
                trigger_ratio,
                adam_lr: 0.002,
                seed: cli.seed,
                verbose: true,
                ..Default::default()
            };
            let hooks = EvalHooks {
                validation: Some((&ds.val_images, &ds.val_labels)),
                train_probe: None,
            };
            let (run, extracted) = embed(
                net,
                TrainData { images: &ds.train_images, labels: &ds.train_labels },
                &triggers,
                &targets,
                &cfg,
                hooks,
            )?;
            let test_acc = accuracy(&run.network, &ds.test_images, &ds.test_labels, 512)?;
            println!("serial: {extracted}");
            println!("test accuracy: {:.2}%", test_acc * 100.0);
            let meta = CheckpointMeta {
                tag: format!("{arch:?}-sn"),
                seed: cli.seed,
                epoch: epochs,
                test_accuracy: Some(test_acc),
                val_accuracy: run.history.last().and_then(|h| h.val_acc),
                sn_digit_accuracy: Some(1.0),
            };
            checkpoint::save(&run.network, &meta, &out)?;
            println!("protected checkpoint written to {}", out.display());
            if let Some(path) = triggers_out {
                std::fs::write(&path, serde_json::to_string(&triggers)?)?;
                println!("trigger set (owner secret) written to {}", path.display());
            }
        }

        Command::ExtractSn { model, triggers } => {
            let (network, _) = checkpoint::load(&model)?;
            let triggers: TriggerSet = serde_json::from_str(&std::fs::read_to_string(&triggers)?)?;
            let sn = extract_sn(&network, &triggers, SnQuantizer::default())?;
            println!("{sn}");
        }

        Command::Verify { endpoint, triggers, sn, registry, keys } => {
            let triggers: TriggerSet = serde_json::from_str(&std::fs::read_to_string(&triggers)?)?;
            let claimed: SerialNumber = sn.parse()?;
            let registry = CaRegistry::open(&registry)?;
            let params = match keys {
                Some(path) => load_keys(&path)?,
                None => registry
                    .lookup(&claimed)
                    .map(|r| r.params.clone())
                    .ok_or_else(|| {
                        snmark::Error::Config(
                            "claimed serial is not filed; pass --keys to supply parameters".into(),
                        )
                    })?,
            };
            let report = verify_remote(
                &endpoint,
                &triggers,
                &claimed,
                SnQuantizer::default(),
                &params,
                &registry,
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            println!("verdict: {}", if report.verdict { "OWNED" } else { "NOT VERIFIED" });
        }

        Command::Prune { data, model, sparsity, steps, out } => {
            let ds = Dataset::load(&data.data_dir)?;
            let (network, meta) = checkpoint::load(&model)?;
            let schedule = PruneSchedule {
                target_sparsity: sparsity,
                fine_tune_steps: steps,
                seed: cli.seed,
                ..Default::default()
            };
            let outcome =
                prune_with_finetune(&network, &schedule, &ds.train_images, &ds.train_labels, None)?;
            let test_acc = accuracy(&outcome.network, &ds.test_images, &ds.test_labels, 512)?;
            let report = sparsity_report(&outcome.network);
            println!("achieved sparsity: {:.4}", report.overall);
            println!("test accuracy: {:.2}%", test_acc * 100.0);
            let meta = CheckpointMeta {
                tag: format!("{}-pruned{:.0}", meta.tag, sparsity * 100.0),
                test_accuracy: Some(test_acc),
                ..meta
            };
            checkpoint::save(&outcome.network, &meta, &out)?;
            println!("pruned checkpoint written to {}", out.display());
        }

        Command::Serve { model, address } => {
            let handle = serve_checkpoint(&model, &address)?;
            println!("serving {} on http://{}", model.display(), handle.addr());
            println!("POST /predict  {{\"pixels\": [784 reals]}} or {{\"batch\": [[...], ...]}}");
            println!("GET  /health");
            println!("press Ctrl-C to stop");
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }

        Command::AttackSim { endpoint, strategy, trials, registry, keys } => {
            let stats = match strategy.as_str() {
                "label" => attack_forge_label(&endpoint, trials, cli.seed)?,
                "sn" => {
                    let registry_path = registry.ok_or_else(|| {
                        snmark::Error::Config("--registry is required for the sn strategy".into())
                    })?;
                    let registry = CaRegistry::open(&registry_path)?;
                    let params = match keys {
                        Some(path) => load_keys(&path)?,
                        None => registry
                            .records()
                            .first()
                            .map(|r| r.params.clone())
                            .ok_or_else(|| {
                                snmark::Error::Config(
                                    "registry is empty; pass --keys to supply parameters".into(),
                                )
                            })?,
                    };
                    attack_forge_sn(
                        &endpoint,
                        &registry,
                        &params,
                        SnQuantizer::default(),
                        crypto::DEFAULT_SN_DIGITS / 10,
                        trials,
                        cli.seed,
                    )?
                }
                other => {
                    return Err(snmark::Error::Config(format!(
                        "unknown strategy '{other}' (label|sn)"
                    )))
                }
            };
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }

        Command::Report { data, profile, table, out_dir, cache_dir, full_table3 } => {
            let profile = resolve_profile(&profile, cli.seed, &cli.config)?;
            let ds = Dataset::load(&data.data_dir)?;
            let mut ctx = ExperimentContext::new(ds, profile, &out_dir, cache_dir)?;
            ctx.verbose = true;
            let wants = |t: &str| table == "all" || table == t;
            if wants("1") {
                let t1 = run_table1(&mut ctx)?;
                let path = write_report(&ctx.out_dir.clone(), "table1_effectiveness", &t1.to_csv(), &t1)?;
                println!("effectiveness table: {}", path.display());
            }
            if wants("2") {
                let t2 = run_table2(&mut ctx)?;
                let path = write_report(&ctx.out_dir.clone(), "table2_fidelity", &t2.to_csv(), &t2)?;
                println!("fidelity table: {}", path.display());
            }
            if wants("3") {
                let t3 = run_table3(&mut ctx, full_table3)?;
                let path = write_report(&ctx.out_dir.clone(), "table3_pruning", &t3.to_csv(), &t3)?;
                println!("pruning table: {}", path.display());
            }
            if wants("curves") {
                let curves = run_curves(&mut ctx)?;
                let path = write_report(&ctx.out_dir.clone(), "curves", &curves.to_csv(), &curves)?;
                println!("curves: {}", path.display());
            }
        }
    }
    Ok(())
}
