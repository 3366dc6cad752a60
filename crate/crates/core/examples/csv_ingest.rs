//! Load a CSV with mixed numeric and categorical columns and missing values,
//! train a forest on it and write it back out.

use adforest::dataset::{load_csv, write_csv, ColumnSelector, CsvOptions};
use adforest::tree::{build_forest, ForestMode, InductionParams};

const ROWS: &str = "\
outlook,temp,humidity,windy,play
sunny,85,85,false,no
sunny,80,90,true,no
overcast,83,86,false,yes
rainy,70,96,false,yes
rainy,68,80,false,yes
rainy,65,70,true,no
overcast,64,65,true,yes
sunny,72,95,false,no
sunny,69,70,false,yes
rainy,75,?,false,yes
sunny,75,70,true,yes
overcast,72,90,true,yes
overcast,81,75,false,yes
rainy,71,91,true,no
";

fn main() -> adforest::Result<()> {
    let dir = std::env::temp_dir().join(format!("adforest-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("weather.csv");
    std::fs::write(&path, ROWS).expect("write sample");

    let options = CsvOptions { class_column: ColumnSelector::Name("play".into()), ..CsvOptions::default() };
    let batch = load_csv(&path, &options)?;
    for a in batch.schema.attributes() {
        println!("{:<9} {:?}", a.name, a.kind);
    }
    println!("classes {:?}, {} records", batch.schema.class_values(), batch.len());

    let params = InductionParams { min_leaf_size: 2, ..InductionParams::default() };
    let forest = build_forest(&batch, 5, ForestMode::SysForStyle, &params)?;
    println!("training accuracy {:.3}", forest.accuracy_on(&batch));
    let (class, votes) = forest.classify(&batch.records[9].unlabeled());
    println!("row 10 (humidity missing) -> {} with votes {votes:?}", batch.schema.class_label(class));

    let out = dir.join("weather-copy.csv");
    write_csv(&batch, &out, &options)?;
    print!("{}", std::fs::read_to_string(&out).expect("read back"));
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
