use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use super::vocab::VocabSpec;
use super::LoadOutcome;
use crate::error::Result;
use crate::recipe_model::RecipeExample;

/// Recipes shorter than this many tokens are dropped.
pub const MIN_RECIPE_TOKENS: usize = 10;
/// Recipes longer than this many tokens are dropped.
pub const MAX_RECIPE_TOKENS: usize = 500;

/// One line of the recipe JSON-lines format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeLine {
    pub ingredients: Vec<String>,
    pub recipe: String,
}

/// A tokenized recipe with string-match copy candidates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeRecord {
    pub ingredients: Vec<Vec<String>>,
    pub recipe: Vec<String>,
    pub copy_candidates: Vec<Vec<(usize, usize)>>,
}

impl RecipeRecord {
    pub fn from_line(line: &RecipeLine) -> Self {
        let ingredients: Vec<Vec<String>> = line
            .ingredients
            .iter()
            .map(|i| tokenize(i))
            .filter(|t| !t.is_empty())
            .collect();
        let recipe = tokenize(&line.recipe);
        let copy_candidates = string_match(&ingredients, &recipe);
        RecipeRecord {
            ingredients,
            recipe,
            copy_candidates,
        }
    }

    /// A copy label is set exactly when a token has a string match.
    pub fn copy_labels(&self) -> Vec<bool> {
        self.copy_candidates.iter().map(|c| !c.is_empty()).collect()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.ingredients
            .iter()
            .flatten()
            .chain(self.recipe.iter())
            .map(String::as_str)
    }

    pub fn encode(&self, vocab: &VocabSpec) -> RecipeExample {
        RecipeExample {
            ingredients: self.ingredients.iter().map(|i| vocab.encode(i)).collect(),
            ingredient_surfaces: self.ingredients.clone(),
            recipe: vocab.encode(&self.recipe),
            recipe_surfaces: self.recipe.clone(),
            copy_candidates: self.copy_candidates.clone(),
            copy_labels: self.copy_labels(),
        }
    }

    pub fn to_line(&self) -> RecipeLine {
        RecipeLine {
            ingredients: self.ingredients.iter().map(|i| i.join(" ")).collect(),
            recipe: self.recipe.join(" "),
        }
    }
}

/// Every `(ingredient, position)` whose token equals each recipe token.
pub fn string_match(ingredients: &[Vec<String>], recipe: &[String]) -> Vec<Vec<(usize, usize)>> {
    recipe
        .iter()
        .map(|tok| {
            let mut c = Vec::new();
            for (i, ing) in ingredients.iter().enumerate() {
                for (j, t) in ing.iter().enumerate() {
                    if t == tok {
                        c.push((i, j));
                    }
                }
            }
            c
        })
        .collect()
}

pub fn parse_recipes<R: BufRead>(reader: R, path: &Path) -> Result<LoadOutcome<RecipeRecord>> {
    let mut out = LoadOutcome::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecipeLine = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                out.skip(path, lineno, format!("malformed recipe: {e}"));
                continue;
            }
        };
        let record = RecipeRecord::from_line(&parsed);
        if record.ingredients.is_empty() {
            out.skip(path, lineno, "empty ingredient list");
            continue;
        }
        let n = record.recipe.len();
        if !(MIN_RECIPE_TOKENS..=MAX_RECIPE_TOKENS).contains(&n) {
            out.skip(path, lineno, format!("recipe has {n} tokens"));
            continue;
        }
        out.records.push(record);
    }
    Ok(out)
}

pub fn load_recipes(path: impl AsRef<Path>) -> Result<LoadOutcome<RecipeRecord>> {
    let path = path.as_ref();
    parse_recipes(BufReader::new(File::open(path)?), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> LoadOutcome<RecipeRecord> {
        parse_recipes(text.as_bytes(), Path::new("test.jsonl")).unwrap()
    }

    #[test]
    fn banana_and_cup_are_matched() {
        let line = RecipeLine {
            ingredients: vec!["1 large banana, sliced".into(), "1 cup plain soy milk".into()],
            recipe: "Add the banana and a cup of water to the blender .".into(),
        };
        let r = RecipeRecord::from_line(&line);
        let v = r.recipe.iter().position(|t| t == "banana").unwrap();
        assert_eq!(r.copy_candidates[v], vec![(0, 2)]);
        let v = r.recipe.iter().position(|t| t == "cup").unwrap();
        assert_eq!(r.copy_candidates[v], vec![(1, 1)]);
        let labels = r.copy_labels();
        assert!(labels[v]);
        assert!(!labels[0]);
    }

    #[test]
    fn length_filter_boundaries() {
        let nine = r#"{"ingredients":["1 egg"],"recipe":"a b c d e f g h i"}"#;
        let ten = r#"{"ingredients":["1 egg"],"recipe":"a b c d e f g h i j"}"#;
        let out = parse(&format!("{nine}\n{ten}\n"));
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.skipped[0].line, 1);
    }

    #[test]
    fn malformed_and_empty_lines_are_reported() {
        let good = r#"{"ingredients":["1 egg"],"recipe":"crack the egg into a bowl and whisk it well"}"#;
        let text = format!("{good}\nnot json\n{{\"ingredients\":[],\"recipe\":\"x\"}}\n\n{good}\n");
        let out = parse(&text);
        assert_eq!(out.records.len(), 2);
        let lines: Vec<usize> = out.skipped.iter().map(|s| s.line).collect();
        assert_eq!(lines, vec![2, 3]);
    }

    #[test]
    fn encoded_candidates_point_at_real_positions() {
        let line = RecipeLine {
            ingredients: vec!["2 cup flour".into(), "1 cup sugar".into()],
            recipe: "mix the flour and the sugar with one cup of milk .".into(),
        };
        let r = RecipeRecord::from_line(&line);
        let vocab = VocabSpec::build(r.tokens(), 100, &[]).unwrap();
        let ex = r.encode(&vocab);
        ex.validate().unwrap();
        let cup = r.recipe.iter().position(|t| t == "cup").unwrap();
        assert_eq!(ex.copy_candidates[cup].len(), 2);
    }

    #[test]
    fn line_round_trip() {
        let line = RecipeLine {
            ingredients: vec!["2 cup flour".into()],
            recipe: "mix the flour well and bake it for ten minutes .".into(),
        };
        let r = RecipeRecord::from_line(&line);
        assert_eq!(RecipeRecord::from_line(&r.to_line()), r);
    }
}
