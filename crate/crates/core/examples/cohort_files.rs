//! Build a cohort by hand, write it in the on-disk format, and read a CSV variant.

use stackdecode::data::{load_cohort, Cohort, LabelSpace, Matrix, SubjectDataset};

fn main() -> stackdecode::Result<()> {
    let labels = LabelSpace::new(["face", "house", "tool"])?;
    let subject = |id: &str, shift: f64| {
        let x = Matrix::from_fn(9, 4, |r, c| ((r % 3) == c) as u8 as f64 + shift + 0.01 * r as f64);
        SubjectDataset::new(id, x, (0..9).map(|r| r % 3).collect(), 3)
    };
    let cohort = Cohort::new(vec![subject("s1", 0.0)?, subject("s2", 0.5)?], labels)?;

    let dir = std::env::temp_dir().join("stackdecode-example-files");
    cohort.save(&dir)?;
    for entry in std::fs::read_dir(&dir).map_err(|e| stackdecode::Error::Config(e.to_string()))? {
        println!("{}", entry.map_err(|e| stackdecode::Error::Config(e.to_string()))?.path().display());
    }
    println!("{}", std::fs::read_to_string(dir.join("cohort.json")).unwrap());

    // feature files ending in .csv are read as headerless CSV
    let csv_dir = dir.join("csv");
    std::fs::create_dir_all(&csv_dir).unwrap();
    std::fs::write(csv_dir.join("a.csv"), "1,0\n0,1\n1,0.1\n0,1.1\n").unwrap();
    std::fs::write(csv_dir.join("a.labels"), "face\nhouse\nface\nhouse\n").unwrap();
    std::fs::write(
        csv_dir.join("cohort.json"),
        r#"{"classes":["face","house"],"n_features":2,"subjects":[{"id":"a","features":"a.csv","labels":"a.labels"}]}"#,
    )
    .unwrap();
    match load_cohort(&csv_dir) {
        Ok(c) => println!("csv cohort: {} subject(s)", c.n_subjects()),
        Err(e) => println!("csv cohort rejected: {e}"),
    }
    Ok(())
}
