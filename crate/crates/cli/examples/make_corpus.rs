//! Generate a synthetic grayscale corpus for training/evaluation demos:
//!
//! ```text
//! cargo run --release -p pepper-cli --example make_corpus -- data 10 256 42
//! ```
//!
//! writes `data/train/` (all but the last two images) and `data/test/`
//! (the last two).

use pepper_core::corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let root = std::path::PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let size: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(256);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(42);
    if count < 3 {
        return Err("need at least 3 images (train + 2 test)".into());
    }

    let all = corpus::generate_corpus(root.join("all"), count, size, size, seed)?;
    let train_dir = root.join("train");
    let test_dir = root.join("test");
    std::fs::create_dir_all(&train_dir)?;
    std::fs::create_dir_all(&test_dir)?;
    let split = count - 2;
    for (i, path) in all.iter().enumerate() {
        let dest = if i < split { &train_dir } else { &test_dir };
        std::fs::rename(path, dest.join(path.file_name().unwrap()))?;
    }
    std::fs::remove_dir(root.join("all"))?;
    println!(
        "wrote {split} training images to {} and 2 test images to {}",
        train_dir.display(),
        test_dir.display()
    );
    Ok(())
}
