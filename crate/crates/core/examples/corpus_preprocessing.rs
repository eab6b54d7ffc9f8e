//! Tokenization, ingredient string matching, table delexicalization and
//! coreference filtering on small inline inputs.
//!
//! ```text
//! cargo run --example corpus_preprocessing
//! ```

use std::io::Cursor;
use std::path::Path;

use reflm::corpus::{
    parse_dialogue_records, parse_table, preprocess_document, tokenize, CorefLine, MentionSpan, RecipeLine,
    RecipeRecord, VocabSpec,
};

fn main() -> reflm::Result<()> {
    println!("tokens: {:?}", tokenize("Preheat the oven to 350F; add 2 Bananas."));

    let recipe = RecipeRecord::from_line(&RecipeLine {
        ingredients: vec!["2 ripe bananas".into(), "1 cup flour".into()],
        recipe: "mash the bananas , then fold in the flour .".into(),
    });
    println!("\nrecipe tokens and copy candidates (ingredient, position):");
    for (tok, cands) in recipe.recipe.iter().zip(&recipe.copy_candidates) {
        println!("  {tok:<8} {cands:?}");
    }

    let csv = "name,food,area,phone\nthe golden wok,chinese,north,01223 350688\nhotel du vin,french,centre,01223 227330\n";
    let table = parse_table(Cursor::new(csv), Path::new("inline.csv"))?;
    println!("\ntable cells:");
    for row in &table.cells {
        println!("  {}", row.join(" | "));
    }
    let dialogue = r#"{"turns":[{"speaker":"M","text":"hello , how may i help you ?"},{"speaker":"U","text":"i want chinese food ."},{"speaker":"M","text":"the golden wok serves chinese food . their phone is 01223 350688 ."}]}"#;
    let records = parse_dialogue_records(Cursor::new(dialogue), Path::new("inline.jsonl"), &table)?;
    for turn in &records.records[0].turns {
        println!("  > {}", turn.join(" "));
    }

    let doc = CorefLine {
        tokens: tokenize("Mary Smith met John . She thanked him . A stranger left ."),
        mentions: vec![
            MentionSpan { start: 0, end: 2, entity: 7 },
            MentionSpan { start: 3, end: 4, entity: 9 },
            MentionSpan { start: 5, end: 6, entity: 7 },
            MentionSpan { start: 7, end: 8, entity: 9 },
            MentionSpan { start: 9, end: 11, entity: 4 },
        ],
    };
    let record = preprocess_document(&doc)?;
    println!("\ncoref document after collapsing mentions and dropping singletons:");
    for (tok, m) in record.tokens.iter().zip(&record.mentions) {
        match m {
            Some(e) => print!("{tok}[{e}] "),
            None => print!("{tok} "),
        }
    }
    println!();

    let vocab = VocabSpec::build(recipe.tokens(), 100, &[])?;
    println!("\nvocabulary of {} entries; `bananas` -> {}", vocab.len(), vocab.id("bananas"));
    Ok(())
}
