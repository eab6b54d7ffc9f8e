//! Entity-aware language modelling: a plain LSTM LM, the coreference model
//! trained from scratch, and the coreference model initialized from the LM.
//!
//! ```text
//! cargo run --release --example coref_lm
//! ```

use reflm::corpus::synthetic::{make_synthetic, SyntheticSpec};
use reflm::harness::{Corpus, TokenClass, TrainConfig, TrainedModel};
use reflm::mixture::Mode;
use reflm::task::{Split, Task};

fn main() -> reflm::Result<()> {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data");
    make_synthetic(&SyntheticSpec::new(Task::Coref, 1, 400), &data)?;
    let corpus = Corpus::load(&data)?;

    let base = {
        let mut c = TrainConfig::new(Task::Coref);
        c.hidden_dim = 32;
        c.embed_dim = 16;
        c.attention_dim = 16;
        c.epochs = 8;
        c
    };
    let lm_path = dir.path().join("lm.ckpt");
    let runs = [
        ("LM", Mode::VocabOnly, None),
        ("Pointer", Mode::Supervised, None),
        ("Pointer + init", Mode::Supervised, Some(lm_path.clone())),
    ];
    for (name, mode, init) in runs {
        let mut config = base.clone();
        config.mode = mode;
        config.init_checkpoint = init;
        let mut model = TrainedModel::init(&config, &corpus)?;
        model.train(&corpus)?;
        if mode == Mode::VocabOnly {
            model.save(&lm_path)?;
        }
        let report = model.evaluate(&corpus, Split::Test)?.perplexity;
        println!(
            "{name:<15} all {:>7.3}  entity {:>7.3}  word {:>7.3}",
            report.perplexity(TokenClass::All).unwrap_or(f64::NAN),
            report.perplexity(TokenClass::Reference).unwrap_or(f64::NAN),
            report.perplexity(TokenClass::Word).unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
