//! Dialogue generation with a pointer into a restaurant table.
//!
//! A fifth of the table rows never appear in training dialogues. Their
//! cells are out of vocabulary for the decoder softmax but can still be
//! copied from the table, which is what the `ref-oov` column measures.
//!
//! ```text
//! cargo run --release --example table_pointer
//! ```

use reflm::corpus::synthetic::{make_synthetic, SyntheticSpec};
use reflm::harness::{Corpus, TokenClass, TrainConfig, TrainedModel};
use reflm::mixture::Mode;
use reflm::task::{Split, Task};

fn main() -> reflm::Result<()> {
    let dir = tempfile::tempdir()?;
    make_synthetic(&SyntheticSpec::new(Task::Dialogue, 1, 300), dir.path())?;
    let corpus = Corpus::load(dir.path())?;

    for mode in [Mode::Supervised, Mode::VocabOnly] {
        let mut config = TrainConfig::new(Task::Dialogue);
        config.hidden_dim = 32;
        config.embed_dim = 16;
        config.attention_dim = 16;
        config.epochs = 6;
        config.mode = mode;
        let mut model = TrainedModel::init(&config, &corpus)?;
        let log = model.train(&corpus)?;
        let report = model.evaluate(&corpus, Split::Test)?.perplexity;
        println!(
            "{mode:<11} best epoch {:>2}  all {:>9.3}  table {:>9.3}  table-oov {:>11.3}",
            log.best_epoch,
            report.perplexity(TokenClass::All).unwrap_or(f64::NAN),
            report.perplexity(TokenClass::Reference).unwrap_or(f64::NAN),
            report.perplexity(TokenClass::ReferenceOov).unwrap_or(f64::NAN),
        );
        if mode == Mode::Supervised {
            let gen = model.generate(&corpus, Split::Test, 5, 30, Some(1))?;
            for g in &gen.outputs {
                println!("  turn {}: {}", g.turn.unwrap_or(0), g.tokens.join(" "));
            }
        }
    }
    Ok(())
}
