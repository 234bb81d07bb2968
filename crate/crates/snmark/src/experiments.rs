//! Experiment orchestration: trains the five evaluated models with and
//! without an embedded serial number, reproduces the effectiveness, fidelity
//! and pruning-robustness tables, and emits CSV reports plus per-epoch
//! learning curves.
//!
//! Heavy artifacts (trained networks, histories, signatures) are cached on
//! disk keyed by profile and model, so repeated report runs do not retrain.
//! Training is deterministic, which makes a cache hit equivalent to a fresh
//! run.

use crate::checkpoint::{self, CheckpointMeta};
use crate::crypto::{
    self, sn_verify, CaRecord, CaRegistry, OwnerToken, TrapdoorParams,
};
use crate::error::Result;
use crate::mnist::Dataset;
use crate::network::{accuracy, Network};
use crate::prune::{prune_with_finetune, sparsity_report, PruneRamp, PruneSchedule, PruneScope};
use crate::watermark::{
    embed, encode_sn_to_targets, extract_sn, make_triggers, train, EmbedConfig, EpochStats,
    EvalHooks, SnQuantizer, SnTargets, TrainData, TriggerSet, DEFAULT_TRIGGER_COUNT,
};
use crate::zoo::{self, ArchitectureId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// The five evaluated models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    Teacher,
    Net2Wider,
    RandomPad,
    Net2Deeper,
    RandomInit,
}

pub const ALL_MODELS: [ModelId; 5] = [
    ModelId::Teacher,
    ModelId::Net2Wider,
    ModelId::RandomPad,
    ModelId::Net2Deeper,
    ModelId::RandomInit,
];

impl ModelId {
    pub fn label(&self) -> &'static str {
        match self {
            ModelId::Teacher => "teacher",
            ModelId::Net2Wider => "net2wider",
            ModelId::RandomPad => "random_pad",
            ModelId::Net2Deeper => "net2deeper",
            ModelId::RandomInit => "random_init",
        }
    }

    pub fn architecture(&self) -> ArchitectureId {
        match self {
            ModelId::Teacher => ArchitectureId::Teacher,
            ModelId::Net2Wider | ModelId::RandomPad => ArchitectureId::Wider,
            ModelId::Net2Deeper | ModelId::RandomInit => ArchitectureId::Deeper,
        }
    }
}

/// With or without the embedded serial number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Original,
    Sn,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Sn => "sn",
        }
    }
}

/// Resolved experiment settings. `full` mirrors the desk-scale evaluation;
/// `ci` shrinks widths and epochs for a quick end-to-end pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub width_divisor: usize,
    pub teacher_epochs: usize,
    /// Epochs for the function-preserving transfers (already near teacher
    /// accuracy when training starts).
    pub transfer_epochs: usize,
    pub random_pad_epochs: usize,
    pub random_init_epochs: usize,
    pub batch_size: usize,
    pub trigger_ratio: usize,
    pub adam_lr: f64,
    pub sgd_lr: f64,
    pub sgd_momentum: f64,
    /// Classification fine-tune steps per pruning run.
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    /// Show trigger batches to the pruning fine-tune.
    pub finetune_with_triggers: bool,
    pub trigger_count: usize,
    pub quantizer: SnQuantizer,
    pub seed: u64,
}

impl Profile {
    pub fn full() -> Self {
        Self {
            name: "full".into(),
            width_divisor: 1,
            teacher_epochs: 6,
            transfer_epochs: 3,
            random_pad_epochs: 4,
            random_init_epochs: 5,
            batch_size: 128,
            trigger_ratio: 2,
            adam_lr: 0.002,
            sgd_lr: 0.1,
            sgd_momentum: 0.9,
            finetune_steps: 430,
            finetune_lr: 0.02,
            finetune_with_triggers: false,
            trigger_count: DEFAULT_TRIGGER_COUNT,
            quantizer: SnQuantizer::default(),
            seed: 17,
        }
    }

    /// Quarter-width quick profile; must reproduce the same effectiveness
    /// dichotomy as `full` in a fraction of the time.
    pub fn ci() -> Self {
        Self {
            name: "ci".into(),
            width_divisor: 4,
            teacher_epochs: 5,
            transfer_epochs: 4,
            random_pad_epochs: 4,
            random_init_epochs: 5,
            batch_size: 128,
            trigger_ratio: 3,
            adam_lr: 0.01,
            sgd_lr: 0.1,
            sgd_momentum: 0.9,
            finetune_steps: 200,
            finetune_lr: 0.02,
            finetune_with_triggers: false,
            trigger_count: DEFAULT_TRIGGER_COUNT,
            quantizer: SnQuantizer::default(),
            seed: 17,
        }
    }

    fn epochs_for(&self, id: ModelId) -> usize {
        match id {
            ModelId::Teacher => self.teacher_epochs,
            ModelId::Net2Wider | ModelId::Net2Deeper => self.transfer_epochs,
            ModelId::RandomPad => self.random_pad_epochs,
            ModelId::RandomInit => self.random_init_epochs,
        }
    }

    fn embed_config(&self, id: ModelId, variant: Variant) -> EmbedConfig {
        EmbedConfig {
            epochs: self.epochs_for(id),
            batch_size: self.batch_size,
            trigger_ratio: match variant {
                Variant::Original => 0,
                Variant::Sn => self.trigger_ratio,
            },
            sgd_lr: self.sgd_lr,
            sgd_momentum: self.sgd_momentum,
            adam_lr: self.adam_lr,
            seed: self.seed ^ (id as u64) << 8 ^ (variant as u64) << 16,
            check_interval: 100,
            required_consecutive: 5,
            verbose: false,
        }
    }
}

/// Owner-secret material of one protected model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSignature {
    pub triggers: TriggerSet,
    pub targets: SnTargets,
    pub owner_id: String,
    pub model_id: String,
}

/// A trained model plus everything the experiments measure on it.
pub struct TrainedModel {
    pub id: ModelId,
    pub variant: Variant,
    pub network: Network<f32>,
    pub history: Vec<EpochStats>,
    pub signature: Option<ModelSignature>,
    pub test_accuracy: f64,
}

impl TrainedModel {
    /// Fraction of serial digits the network currently reproduces.
    pub fn sn_digit_fraction(&self, quantizer: SnQuantizer) -> Result<Option<f64>> {
        match &self.signature {
            None => Ok(None),
            Some(sig) => {
                let extracted = extract_sn(&self.network, &sig.triggers, quantizer)?;
                Ok(Some(
                    extracted.matching_digits(&sig.targets.sn) as f64 / sig.targets.sn.len() as f64,
                ))
            }
        }
    }
}

/// Shared state for one experiment campaign: dataset, profile, registry and
/// the train-on-demand model store.
pub struct ExperimentContext {
    pub dataset: Dataset,
    pub profile: Profile,
    pub out_dir: PathBuf,
    cache_dir: Option<PathBuf>,
    params: TrapdoorParams,
    registry: CaRegistry,
    models: BTreeMap<(ModelId, Variant), TrainedModel>,
    pub verbose: bool,
}

impl ExperimentContext {
    /// `out_dir` receives reports and the registry file; `cache_dir`, when
    /// set, caches trained checkpoints across runs.
    pub fn new(
        dataset: Dataset,
        profile: Profile,
        out_dir: impl AsRef<Path>,
        cache_dir: Option<PathBuf>,
    ) -> Result<Self> {
        let out_dir = out_dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&out_dir)?;
        if let Some(dir) = &cache_dir {
            std::fs::create_dir_all(dir)?;
        }
        let params = crypto::keygen(96, profile.seed ^ 0xCA)?;
        let registry = CaRegistry::open(out_dir.join("registry.jsonl"))?;
        Ok(Self {
            dataset,
            profile,
            out_dir,
            cache_dir,
            params,
            registry,
            models: BTreeMap::new(),
            verbose: false,
        })
    }

    pub fn registry(&self) -> &CaRegistry {
        &self.registry
    }

    /// Read-only view of every model trained so far.
    pub fn models_view(&self) -> &BTreeMap<(ModelId, Variant), TrainedModel> {
        &self.models
    }

    pub fn params(&self) -> &TrapdoorParams {
        &self.params
    }

    fn cache_base(&self, id: ModelId, variant: Variant) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|dir| {
            dir.join(format!(
                "{}-{}-{}-s{}",
                self.profile.name,
                id.label(),
                variant.label(),
                self.profile.seed
            ))
        })
    }

    /// Derives and files the signature material for one protected model.
    fn signature_for(&mut self, id: ModelId) -> Result<ModelSignature> {
        let owner_id = "model-owner".to_string();
        let model_id = format!("{}-{}", self.profile.name, id.label());
        let nonce = id as u64;
        let token = OwnerToken::new(&owner_id, &model_id, nonce, &self.params)?;
        let sn = crypto::sn_generate(
            &token,
            &self.params,
            self.profile.quantizer.base,
            self.profile.trigger_count * 10,
        )?;
        // file with the CA before embedding (idempotent across runs)
        if self.registry.lookup(&sn).is_none() {
            let record = CaRecord::new(&owner_id, &model_id, &token, &self.params, &sn)?;
            self.registry.register(record)?;
        }
        let triggers = make_triggers(self.profile.seed ^ 0x7713 ^ nonce, self.profile.trigger_count);
        let targets = encode_sn_to_targets(&sn, self.profile.quantizer, self.profile.trigger_count)?;
        Ok(ModelSignature { triggers, targets, owner_id, model_id })
    }

    /// The starting network for a model: fresh for the teacher and the
    /// scratch baseline, transform of the trained original teacher otherwise.
    fn starting_network(&mut self, id: ModelId) -> Result<Network<f32>> {
        let div = self.profile.width_divisor;
        let seed = self.profile.seed ^ 0x5EED ^ (id as u64) << 4;
        Ok(match id {
            ModelId::Teacher => zoo::build_scaled(ArchitectureId::Teacher, div, seed),
            ModelId::RandomInit => zoo::build_scaled(ArchitectureId::Deeper, div, seed),
            ModelId::Net2Wider => {
                let teacher = self.trained(ModelId::Teacher, Variant::Original)?;
                zoo::net2wider(&teacher.network, seed)?.0
            }
            ModelId::Net2Deeper => {
                let teacher = self.trained(ModelId::Teacher, Variant::Original)?;
                zoo::net2deeper(&teacher.network)?
            }
            ModelId::RandomPad => {
                let teacher = self.trained(ModelId::Teacher, Variant::Original)?;
                zoo::random_pad(&teacher.network, seed)?
            }
        })
    }

    /// Returns the trained model, training (or loading from cache) on demand.
    pub fn trained(&mut self, id: ModelId, variant: Variant) -> Result<&TrainedModel> {
        if self.models.contains_key(&(id, variant)) {
            return Ok(&self.models[&(id, variant)]);
        }
        let model = match self.load_cached(id, variant)? {
            Some(m) => m,
            None => {
                let m = self.train_fresh(id, variant)?;
                self.store_cache(&m)?;
                m
            }
        };
        self.models.insert((id, variant), model);
        Ok(&self.models[&(id, variant)])
    }

    fn train_fresh(&mut self, id: ModelId, variant: Variant) -> Result<TrainedModel> {
        let signature = match variant {
            Variant::Original => None,
            Variant::Sn => Some(self.signature_for(id)?),
        };
        let network = self.starting_network(id)?;
        let mut cfg = self.profile.embed_config(id, variant);
        cfg.verbose = self.verbose;
        if self.verbose {
            eprintln!(
                "[{}] training {} / {} ({} epochs)",
                self.profile.name,
                id.label(),
                variant.label(),
                cfg.epochs
            );
        }
        let data = TrainData { images: &self.dataset.train_images, labels: &self.dataset.train_labels };
        let hooks = EvalHooks {
            validation: Some((&self.dataset.val_images, &self.dataset.val_labels)),
            train_probe: Some((
                &self.dataset.val_images, // probe size matches validation
                &self.dataset.val_labels,
            )),
        };
        // the training-accuracy probe must come from training data
        let probe_n = 5_000.min(self.dataset.train_images.outer_len());
        let width = 28 * 28;
        let train_probe_images = crate::tensor::Tensor::new(
            vec![probe_n, width],
            self.dataset.train_images.data()[..probe_n * width].to_vec(),
        )?;
        let train_probe_labels = self.dataset.train_labels[..probe_n].to_vec();
        let hooks = EvalHooks {
            validation: hooks.validation,
            train_probe: Some((&train_probe_images, &train_probe_labels)),
        };

        let run = match &signature {
            None => train(network, data, None, &cfg, hooks)?,
            Some(sig) => {
                let (run, _) = embed(network, data, &sig.triggers, &sig.targets, &cfg, hooks)?;
                run
            }
        };
        let test_accuracy =
            accuracy(&run.network, &self.dataset.test_images, &self.dataset.test_labels, 512)?;
        Ok(TrainedModel {
            id,
            variant,
            network: run.network,
            history: run.history,
            signature,
            test_accuracy,
        })
    }

    fn load_cached(&mut self, id: ModelId, variant: Variant) -> Result<Option<TrainedModel>> {
        let Some(base) = self.cache_base(id, variant) else { return Ok(None) };
        let ckpt = base.with_extension("snck");
        let side = base.with_extension("side.json");
        if !ckpt.exists() || !side.exists() {
            return Ok(None);
        }
        let (network, meta) = checkpoint::load(&ckpt)?;
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(&side)?)?;
        if let Some(sig) = &sidecar.signature {
            // make sure the cached serial is still filed
            if self.registry.lookup(&sig.targets.sn).is_none() {
                let _ = self.signature_for(id)?;
            }
        }
        Ok(Some(TrainedModel {
            id,
            variant,
            network,
            history: sidecar.history,
            signature: sidecar.signature,
            test_accuracy: meta.test_accuracy.unwrap_or(0.0),
        }))
    }

    fn store_cache(&self, model: &TrainedModel) -> Result<()> {
        let Some(base) = self.cache_base(model.id, model.variant) else { return Ok(()) };
        let meta = CheckpointMeta {
            tag: format!("{}-{}-{}", self.profile.name, model.id.label(), model.variant.label()),
            seed: self.profile.seed,
            epoch: model.history.len(),
            test_accuracy: Some(model.test_accuracy),
            val_accuracy: model.history.last().and_then(|h| h.val_acc),
            sn_digit_accuracy: None,
        };
        checkpoint::save(&model.network, &meta, base.with_extension("snck"))?;
        let sidecar = Sidecar { history: model.history.clone(), signature: model.signature.clone() };
        std::fs::write(base.with_extension("side.json"), serde_json::to_string(&sidecar)?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    history: Vec<EpochStats>,
    signature: Option<ModelSignature>,
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

/// Effectiveness: serial extraction on protected vs unprotected models.
#[derive(Debug, Clone, Serialize)]
pub struct EffectivenessRow {
    pub model: String,
    /// Digit accuracy of extraction on the protected model (0..=1).
    pub protected_digit_acc: f64,
    pub protected_verdict: bool,
    /// Digit match rate of the unprotected model against the filed serial.
    pub unprotected_digit_rate: f64,
    pub unprotected_verdict: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1 {
    pub experiment: String,
    pub profile: Profile,
    pub rows: Vec<EffectivenessRow>,
}

/// Extraction + registry verdict for every model pair.
pub fn run_table1(ctx: &mut ExperimentContext) -> Result<Table1> {
    let mut rows = Vec::new();
    for id in ALL_MODELS {
        ctx.trained(id, Variant::Sn)?;
        ctx.trained(id, Variant::Original)?;
        let quant = ctx.profile.quantizer;

        let protected = &ctx.models[&(id, Variant::Sn)];
        let sig = protected.signature.as_ref().expect("sn variant carries a signature");
        let extracted = extract_sn(&protected.network, &sig.triggers, quant)?;
        let protected_digit_acc =
            extracted.matching_digits(&sig.targets.sn) as f64 / sig.targets.sn.len() as f64;
        let protected_verdict = extracted == sig.targets.sn
            && sn_verify(&extracted, &ctx.params, &ctx.registry)?;

        let unprotected = &ctx.models[&(id, Variant::Original)];
        let stray = extract_sn(&unprotected.network, &sig.triggers, quant)?;
        let unprotected_digit_rate =
            stray.matching_digits(&sig.targets.sn) as f64 / sig.targets.sn.len() as f64;
        let unprotected_verdict =
            stray == sig.targets.sn && sn_verify(&stray, &ctx.params, &ctx.registry)?;

        rows.push(EffectivenessRow {
            model: id.label().to_string(),
            protected_digit_acc,
            protected_verdict,
            unprotected_digit_rate,
            unprotected_verdict,
        });
    }
    Ok(Table1 { experiment: "effectiveness".into(), profile: ctx.profile.clone(), rows })
}

impl Table1 {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for row in &self.rows {
            let _ = write!(out, ",{}", row.model);
        }
        out.push('\n');
        out.push_str("protected_sn_digit_acc");
        for row in &self.rows {
            let _ = write!(out, ",{:.4}", row.protected_digit_acc);
        }
        out.push('\n');
        out.push_str("protected_verdict");
        for row in &self.rows {
            let _ = write!(out, ",{}", row.protected_verdict);
        }
        out.push('\n');
        out.push_str("unprotected_sn_digit_rate");
        for row in &self.rows {
            let _ = write!(out, ",{:.4}", row.unprotected_digit_rate);
        }
        out.push('\n');
        out.push_str("unprotected_verdict");
        for row in &self.rows {
            let _ = write!(out, ",{}", row.unprotected_verdict);
        }
        out.push('\n');
        out
    }
}

/// Fidelity: test accuracy of each original/protected pair.
#[derive(Debug, Clone, Serialize)]
pub struct FidelityRow {
    pub model: String,
    pub original_acc: f64,
    pub sn_acc: f64,
    pub gap_pp: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table2 {
    pub experiment: String,
    pub profile: Profile,
    pub rows: Vec<FidelityRow>,
}

pub fn run_table2(ctx: &mut ExperimentContext) -> Result<Table2> {
    let mut rows = Vec::new();
    for id in ALL_MODELS {
        let original_acc = ctx.trained(id, Variant::Original)?.test_accuracy;
        let sn_acc = ctx.trained(id, Variant::Sn)?.test_accuracy;
        rows.push(FidelityRow {
            model: id.label().to_string(),
            original_acc,
            sn_acc,
            gap_pp: (original_acc - sn_acc).abs() * 100.0,
        });
    }
    Ok(Table2 { experiment: "fidelity".into(), profile: ctx.profile.clone(), rows })
}

impl Table2 {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,original_acc,sn_acc,gap_pp\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{:.3}",
                row.model, row.original_acc, row.sn_acc, row.gap_pp
            );
        }
        out
    }
}

/// Robustness: accuracy and serial survival across the sparsity grid.
#[derive(Debug, Clone, Serialize)]
pub struct RobustnessCell {
    pub model: String,
    pub sparsity: f64,
    pub class_acc: f64,
    pub sn_digit_acc: f64,
    pub achieved_sparsity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table3 {
    pub experiment: String,
    pub profile: Profile,
    /// Unpruned protected-model accuracies, for the drop columns.
    pub baselines: Vec<(String, f64)>,
    pub cells: Vec<RobustnessCell>,
}

pub const TABLE3_MODELS: [ModelId; 3] = [ModelId::Teacher, ModelId::Net2Wider, ModelId::Net2Deeper];
pub const TABLE3_SPARSITIES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Prune-with-fine-tune over the sparsity grid. `include_baselines` adds the
/// two random baselines as extra rows beyond the evaluated three models.
pub fn run_table3(ctx: &mut ExperimentContext, include_baselines: bool) -> Result<Table3> {
    let mut models: Vec<ModelId> = TABLE3_MODELS.to_vec();
    if include_baselines {
        models.push(ModelId::RandomPad);
        models.push(ModelId::RandomInit);
    }
    let mut cells = Vec::new();
    let mut baselines = Vec::new();
    for id in models {
        ctx.trained(id, Variant::Sn)?;
        let profile = ctx.profile.clone();
        let model = &ctx.models[&(id, Variant::Sn)];
        let sig = model.signature.clone().expect("sn variant carries a signature");
        baselines.push((id.label().to_string(), model.test_accuracy));
        let network = model.network.clone();
        for (k, &sparsity) in TABLE3_SPARSITIES.iter().enumerate() {
            if ctx.verbose {
                eprintln!("[{}] pruning {} to {:.0}%", profile.name, id.label(), sparsity * 100.0);
            }
            let schedule = PruneSchedule {
                target_sparsity: sparsity,
                ramp: PruneRamp::Cubic,
                scope: PruneScope::PerLayer,
                fine_tune_steps: profile.finetune_steps,
                batch_size: profile.batch_size,
                learning_rate: profile.finetune_lr,
                momentum: profile.sgd_momentum,
                update_every: (profile.finetune_steps / 20).max(1),
                include_triggers: profile.finetune_with_triggers,
                seed: profile.seed ^ 0xF1E1D,
            };
            let outcome = prune_with_finetune(
                &network,
                &schedule,
                &ctx.dataset.train_images,
                &ctx.dataset.train_labels,
                Some((&sig.triggers, &sig.targets)),
            )?;
            let class_acc = accuracy(
                &outcome.network,
                &ctx.dataset.test_images,
                &ctx.dataset.test_labels,
                512,
            )?;
            let extracted = extract_sn(&outcome.network, &sig.triggers, profile.quantizer)?;
            let sn_digit_acc =
                extracted.matching_digits(&sig.targets.sn) as f64 / sig.targets.sn.len() as f64;
            cells.push(RobustnessCell {
                model: id.label().to_string(),
                sparsity,
                class_acc,
                sn_digit_acc,
                achieved_sparsity: sparsity_report(&outcome.network).overall,
            });
            let _ = k;
        }
    }
    Ok(Table3 {
        experiment: "pruning-robustness".into(),
        profile: ctx.profile.clone(),
        baselines,
        cells,
    })
}

impl Table3 {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,sparsity,class_acc,sn_digit_acc,achieved_sparsity\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{:.1},{:.4},{:.4},{:.4}",
                c.model, c.sparsity, c.class_acc, c.sn_digit_acc, c.achieved_sparsity
            );
        }
        out
    }
}

/// Per-epoch accuracy curves for every trained pair.
#[derive(Debug, Clone, Serialize)]
pub struct CurvesReport {
    pub experiment: String,
    pub profile: Profile,
    pub rows: Vec<CurveRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub model: String,
    pub variant: String,
    pub epoch: usize,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub classifier_loss: f64,
    pub sn_digits_ok: Option<usize>,
}

pub fn run_curves(ctx: &mut ExperimentContext) -> Result<CurvesReport> {
    let mut rows = Vec::new();
    for id in ALL_MODELS {
        for variant in [Variant::Original, Variant::Sn] {
            let model = ctx.trained(id, variant)?;
            for h in &model.history {
                rows.push(CurveRow {
                    model: id.label().to_string(),
                    variant: variant.label().to_string(),
                    epoch: h.epoch,
                    train_acc: h.train_acc,
                    val_acc: h.val_acc,
                    classifier_loss: h.classifier_loss,
                    sn_digits_ok: h.sn_digits_ok,
                });
            }
        }
    }
    Ok(CurvesReport { experiment: "curves".into(), profile: ctx.profile.clone(), rows })
}

impl CurvesReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,variant,epoch,train_acc,val_acc,classifier_loss,sn_digits_ok\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.5},{}",
                r.model,
                r.variant,
                r.epoch,
                fmt(r.train_acc),
                fmt(r.val_acc),
                r.classifier_loss,
                r.sn_digits_ok.map(|d| d.to_string()).unwrap_or_default()
            );
        }
        out
    }

    /// First epoch at which validation accuracy reaches `threshold`.
    pub fn epochs_to_reach(&self, model: &str, variant: &str, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .filter(|r| r.model == model && r.variant == variant)
            .find(|r| r.val_acc.unwrap_or(0.0) >= threshold)
            .map(|r| r.epoch)
    }
}

/// Writes a report CSV plus a JSON config echo next to it.
pub fn write_report(dir: &Path, name: &str, csv: &str, echo: &impl Serialize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{name}.csv"));
    std::fs::write(&csv_path, csv)?;
    std::fs::write(dir.join(format!("{name}.config.json")), serde_json::to_string_pretty(echo)?)?;
    Ok(csv_path)
}
