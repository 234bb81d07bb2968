//! Trains the quarter-width teacher on MNIST and reports accuracy.
//!
//! Expects the IDX files under ./data/mnist (or $SNMARK_MNIST_DIR).
//! Run with: cargo run --release --example train_classifier

use snmark::mnist::Dataset;
use snmark::network::accuracy;
use snmark::watermark::{train, EmbedConfig, EvalHooks, TrainData};
use snmark::zoo::{build_scaled, ArchitectureId};

fn main() -> snmark::Result<()> {
    let dir = Dataset::default_dir();
    let ds = match Dataset::load(&dir) {
        Ok(ds) => ds,
        Err(e) => {
            eprintln!("could not load MNIST from {}: {e}", dir.display());
            eprintln!("place the four IDX files there or set SNMARK_MNIST_DIR");
            return Ok(());
        }
    };
    println!(
        "loaded {} train / {} validation / {} test images",
        ds.train_images.outer_len(),
        ds.val_images.outer_len(),
        ds.test_images.outer_len()
    );

    let net = build_scaled::<f32>(ArchitectureId::Teacher, 4, 7);
    let cfg = EmbedConfig { epochs: 2, trigger_ratio: 0, seed: 7, verbose: true, ..Default::default() };
    let run = train(
        net,
        TrainData { images: &ds.train_images, labels: &ds.train_labels },
        None,
        &cfg,
        EvalHooks { validation: Some((&ds.val_images, &ds.val_labels)), train_probe: None },
    )?;
    let test = accuracy(&run.network, &ds.test_images, &ds.test_labels, 512)?;
    println!("test accuracy after {} epochs: {:.2}%", cfg.epochs, test * 100.0);
    Ok(())
}
