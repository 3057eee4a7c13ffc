//! Generate a synthetic cohort, save it, load it back.
//!
//! cargo run --example generate_cohort -- [preset] [out-dir]

use stackdecode::data::load_cohort;
use stackdecode::synthetic::{generate_cohort, Preset, SyntheticSpec};

fn main() -> stackdecode::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let spec = match args.first() {
        Some(name) => name.parse::<Preset>()?.spec(),
        None => SyntheticSpec::standard_benchmark(),
    };
    let cohort = generate_cohort(&spec)?;
    println!(
        "{} subjects, {} features, classes {:?}",
        cohort.n_subjects(),
        cohort.n_features(),
        cohort.label_space().classes()
    );
    for s in cohort.subjects().iter().take(3) {
        println!("  {}: {} rows, class counts {:?}", s.id(), s.n_rows(), s.class_counts(cohort.n_classes()));
    }

    let dir = match args.get(1) {
        Some(d) => std::path::PathBuf::from(d),
        None => std::env::temp_dir().join("stackdecode-example-cohort"),
    };
    cohort.save(&dir)?;
    let back = load_cohort(&dir)?;
    assert_eq!(back.content_hash(), cohort.content_hash());
    println!("saved to {} (hash {})", dir.display(), &cohort.content_hash()[..12]);
    Ok(())
}
