//! Finite-difference gradient checks of the three models at hidden size 4.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reflm::coref_model::{AnnotatedDocument, CorefConfig, CorefModel, CorefVariant};
use reflm::mixture::Mode;
use reflm::numcore::{grad_check, GradCheckReport, ParamStore};
use reflm::recipe_model::{RecipeConfig, RecipeExample, RecipeModel};
use reflm::table_model::{DialogueExample, TableConfig, TableIds, TableModel};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn show(name: &str, report: &GradCheckReport) {
    let verdict = if report.passed() { "ok" } else { "FAILED" };
    println!(
        "{name:<22} {verdict:<6} {:>5} coordinates, max relative error {:.2e}",
        report.checked, report.max_relative_error
    );
    if let Some(w) = &report.worst {
        println!("  worst: {w:?}");
    }
}

fn main() -> reflm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut store = ParamStore::new();
    let cfg = RecipeConfig { vocab_size: 10, embed_dim: 3, hidden_dim: 4, attention_dim: 3, bos: 1, eos: 2 };
    let recipe = RecipeModel::new(&mut store, &mut rng, cfg, Mode::Latent)?;
    let ex = RecipeExample {
        ingredients: vec![vec![5, 6], vec![7]],
        ingredient_surfaces: vec![vec!["a".into(), "b".into()], vec!["c".into()]],
        recipe: vec![8, 6, 7],
        recipe_surfaces: vec!["d".into(), "b".into(), "c".into()],
        copy_candidates: vec![vec![], vec![(0, 1)], vec![(1, 0)]],
        copy_labels: vec![false, true, true],
    };
    let ids: Vec<_> = store.ids().collect();
    for mode in [Mode::Supervised, Mode::Latent] {
        let r = grad_check(&mut store, &ids, H, TOL, |t| recipe.sequence_nll(t, &ex, mode, None))?;
        show(&format!("recipe {mode}"), &r);
    }

    let mut store = ParamStore::new();
    let cfg = TableConfig {
        vocab_size: 14,
        embed_dim: 3,
        hidden_dim: 4,
        attention_dim: 3,
        sentence_attention: true,
        bos: 1,
        eos: 2,
    };
    let table_model = TableModel::new(&mut store, &mut rng, cfg, Mode::Latent)?;
    let table = TableIds { attributes: vec![4, 5, 6], cells: vec![vec![7, 8, 9], vec![10, 11, 12]] };
    let dialogue = DialogueExample { turns: vec![vec![8], vec![5], vec![11, 3]] };
    let ids: Vec<_> = store.ids().collect();
    for mode in [Mode::Supervised, Mode::Latent] {
        let r = grad_check(&mut store, &ids, H, TOL, |t| table_model.dialogue_nll(t, &table, &dialogue, mode, None))?;
        show(&format!("table {mode}"), &r);
    }

    let mut store = ParamStore::new();
    let cfg = CorefConfig { vocab_size: 9, embed_dim: 3, hidden_dim: 4, attention_dim: 3, bos: 1, eos: 2 };
    let coref = CorefModel::new(&mut store, &mut rng, cfg, CorefVariant::Pointer)?;
    let doc = AnnotatedDocument {
        tokens: vec![5, 3, 6, 5, 7],
        mentions: vec![Some(1), None, Some(2), Some(1), Some(2)],
    };
    let ids: Vec<_> = store.ids().collect();
    let r = grad_check(&mut store, &ids, H, TOL, |t| coref.document_nll(t, &doc, None))?;
    show("coref", &r);
    Ok(())
}
