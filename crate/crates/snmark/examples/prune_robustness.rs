//! Prunes a protected model across sparsity levels and watches the serial
//! number survive while accuracy holds.
//!
//! Run with: cargo run --release --example prune_robustness

use snmark::experiments::{ExperimentContext, ModelId, Profile, Variant};
use snmark::mnist::Dataset;
use snmark::network::accuracy;
use snmark::prune::{prune_with_finetune, PruneSchedule};
use snmark::watermark::extract_sn;

fn main() -> snmark::Result<()> {
    let ds = match Dataset::load(Dataset::default_dir()) {
        Ok(ds) => ds,
        Err(e) => {
            eprintln!("MNIST unavailable ({e}); see README for data setup");
            return Ok(());
        }
    };

    // quick profile; trained models are cached under .snmark-cache
    let mut ctx = ExperimentContext::new(
        ds,
        Profile::ci(),
        std::env::temp_dir().join("snmark-prune-example"),
        Some(".snmark-cache".into()),
    )?;
    ctx.verbose = true;
    let profile = ctx.profile.clone();
    ctx.trained(ModelId::Teacher, Variant::Sn)?;
    println!("protected teacher ready");

    let model = &ctx.models_view()[&(ModelId::Teacher, Variant::Sn)];
    let sig = model.signature.clone().expect("protected model has a signature");
    let baseline = model.test_accuracy;
    println!("unpruned accuracy: {:.2}%\n", baseline * 100.0);
    println!("{:>8}  {:>10}  {:>8}", "sparsity", "class acc", "sn digits");

    let network = model.network.clone();
    for sparsity in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let schedule = PruneSchedule {
            target_sparsity: sparsity,
            fine_tune_steps: profile.finetune_steps,
            learning_rate: profile.finetune_lr,
            seed: 9,
            ..Default::default()
        };
        let outcome = prune_with_finetune(
            &network,
            &schedule,
            &ctx.dataset.train_images,
            &ctx.dataset.train_labels,
            Some((&sig.triggers, &sig.targets)),
        )?;
        let acc = accuracy(&outcome.network, &ctx.dataset.test_images, &ctx.dataset.test_labels, 512)?;
        let extracted = extract_sn(&outcome.network, &sig.triggers, profile.quantizer)?;
        println!(
            "{:>7.0}%  {:>9.2}%  {:>5}/40",
            sparsity * 100.0,
            acc * 100.0,
            extracted.matching_digits(&sig.targets.sn)
        );
    }
    Ok(())
}
