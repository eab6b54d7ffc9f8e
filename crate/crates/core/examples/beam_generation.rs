//! Beam search over the recipe model, including copies of ingredient words
//! the decoder vocabulary has never seen, scored with corpus BLEU-4.
//!
//! ```text
//! cargo run --release --example beam_generation
//! ```

use reflm::corpus::synthetic::{make_synthetic, SyntheticSpec};
use reflm::corpus::VocabSpec;
use reflm::harness::{beam_decode, greedy_decode, Corpus, Encoded, RecipeStepper, TaskModel, TrainConfig, TrainedModel};
use reflm::task::{Split, Task};

fn main() -> reflm::Result<()> {
    let dir = tempfile::tempdir()?;
    make_synthetic(&SyntheticSpec::new(Task::Recipe, 3, 300), dir.path())?;
    let corpus = Corpus::load(dir.path())?;
    let mut config = TrainConfig::new(Task::Recipe);
    config.hidden_dim = 32;
    config.embed_dim = 16;
    config.attention_dim = 16;
    config.epochs = 6;
    let mut model = TrainedModel::init(&config, &corpus)?;
    model.train(&corpus)?;

    let (TaskModel::Recipe(recipe), Encoded::Recipe(test)) = (&model.model, model.encode(&corpus, Split::Test)) else {
        unreachable!("recipe corpus");
    };
    let ex = &test[0];
    let ingredients: Vec<String> = ex.ingredient_surfaces.iter().map(|i| i.join(" ")).collect();
    println!("ingredients: {}", ingredients.join(" / "));
    println!("reference:   {}", ex.recipe_surfaces.join(" "));
    let stepper = RecipeStepper::new(recipe, &model.store, ex, VocabSpec::UNK_ID)?;
    let words = |syms: &[usize]| -> String {
        syms.iter()
            .map(|&s| stepper.surface(s, |id| model.vocab.token(id)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let greedy = greedy_decode(&stepper, 40)?;
    println!("greedy       {:>8.3}  {}", greedy.log_prob, words(&greedy.symbols));
    for (rank, h) in beam_decode(&stepper, 4, 40)?.iter().enumerate() {
        println!("beam #{rank}      {:>8.3}  {}", h.log_prob, words(&h.symbols));
    }

    for width in [1, 5] {
        let report = model.generate(&corpus, Split::Test, width, 40, None)?;
        println!(
            "beam width {width}: BLEU {:.4} (precisions {:.3?}, brevity {:.3})",
            report.bleu.bleu, report.bleu.precisions, report.bleu.brevity_penalty
        );
    }
    Ok(())
}
