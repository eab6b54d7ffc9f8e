//! Trains the table model on a synthetic dialogue corpus without held-out
//! rows, then writes attention heat maps for a few training dialogues and
//! reports how much copy mass lands on the cell each answer refers to.
//!
//! ```text
//! cargo run --release --example heatmap_export -- [out-dir]
//! ```
//!
//! Each CSV has one column per decoding step and rows `pi`, `p_attr …`,
//! `p_row …`, `p_col …` and `p_copy r.c …`.

use std::path::PathBuf;

use reflm::corpus::synthetic::{make_synthetic, SyntheticSpec};
use reflm::harness::{Corpus, TrainConfig, TrainedModel};
use reflm::task::{Split, Task};

fn main() -> reflm::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "heatmaps".into()));
    let dir = tempfile::tempdir()?;
    let spec = SyntheticSpec {
        held_out_fraction: 0.0,
        ..SyntheticSpec::new(Task::Dialogue, 1, 300)
    };
    make_synthetic(&spec, dir.path())?;
    let corpus = Corpus::load(dir.path())?;

    let mut config = TrainConfig::new(Task::Dialogue);
    config.hidden_dim = 32;
    config.embed_dim = 16;
    config.attention_dim = 16;
    config.lr = 0.2;
    config.lr_decay = 1.0;
    config.epochs = 40;
    let mut model = TrainedModel::init(&config, &corpus)?;
    model.train(&corpus)?;

    std::fs::create_dir_all(&out)?;
    for index in 0..3 {
        let map = model.heatmap(&corpus, Split::Train, index, None)?;
        let path = out.join(format!("dialogue_train_{index}.csv"));
        std::fs::write(&path, map.to_csv()?)?;
        println!("wrote {}", path.display());
        for (step, column) in map.columns.iter().enumerate() {
            let token = column.split_whitespace().nth(1).unwrap_or_default();
            if !token.starts_with('_') {
                continue;
            }
            let target = map
                .block("p_copy")
                .into_iter()
                .find(|r| r.label.ends_with(&format!(" {token}")));
            if let Some(row) = target {
                println!("  {column:<16} p_copy on {:<20} {:.3}", row.label, row.values[step].unwrap_or(0.0));
            }
        }
    }
    Ok(())
}
