//! Deterministic desk-scale fixtures in the external file formats.
//!
//! Recipes reference their ingredients in list order, with a share of
//! ingredient names held out of the training split. Dialogues ask about rows
//! of a small restaurant table whose held-out rows only appear in validation
//! and test transcripts. Coreference documents mention a few recurring people
//! by name or pronoun, plus one-off characters that preprocessing drops.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coref::{CorefLine, MentionSpan};
use super::dialogue::{DialogueLine, Speaker, TurnLine};
use super::recipes::RecipeLine;
use crate::error::{invalid, Result};
use crate::task::{Split, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub task: Task,
    pub seed: u64,
    /// Total number of examples across the three splits.
    pub size: usize,
    /// Share of ingredient names (recipes) or table rows (dialogue) that never
    /// appear in training text.
    pub held_out_fraction: f64,
    /// Rows in the synthetic database table; dialogue only.
    pub table_rows: usize,
}

impl SyntheticSpec {
    pub fn new(task: Task, seed: u64, size: usize) -> Self {
        SyntheticSpec {
            task,
            seed,
            size,
            held_out_fraction: 0.2,
            table_rows: TABLE_ROWS,
        }
    }

    fn split_sizes(&self) -> [usize; 3] {
        let train = (self.size as f64 * 0.8).round() as usize;
        let valid = (self.size - train) / 2;
        [train, valid, self.size - train - valid]
    }
}

/// Generated examples per split.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
    /// Tokens that only occur outside the training split.
    pub held_out: Vec<String>,
}

impl<T> SyntheticCorpus<T> {
    pub fn split(&self, split: Split) -> &[T] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Written next to the generated files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: Task,
    pub seed: Option<u64>,
    pub source: String,
    /// Split name to file name.
    pub files: BTreeMap<String, String>,
    /// Split name to the ids of its examples.
    pub splits: BTreeMap<String, Vec<usize>>,
    pub held_out: Vec<String>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.as_ref().join(Self::FILE))?)?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        fs::write(dir.as_ref().join(Self::FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

const FOODS: [&str; 60] = [
    "apple", "banana", "carrot", "onion", "garlic", "potato", "tomato", "spinach", "celery", "leek", "pepper",
    "lemon", "lime", "mango", "peach", "pear", "plum", "cherry", "grape", "melon", "kale", "cabbage", "turnip",
    "parsnip", "radish", "beet", "squash", "pumpkin", "zucchini", "eggplant", "fennel", "ginger", "basil", "mint",
    "thyme", "rosemary", "sage", "parsley", "dill", "chive", "butter", "cheese", "yogurt", "cream", "honey",
    "sugar", "flour", "rice", "oats", "barley", "lentil", "chickpea", "bean", "pea", "corn", "walnut", "almond",
    "cashew", "raisin", "coconut",
];

const UNITS: [(&str, &str); 8] = [
    ("cup", "pour"),
    ("tablespoon", "stir"),
    ("pinch", "sprinkle"),
    ("clove", "mince"),
    ("slice", "layer"),
    ("pound", "roast"),
    ("handful", "toss"),
    ("teaspoon", "whisk"),
];

const ADJECTIVES: [&str; 4] = ["fresh", "large", "small", "ripe"];

fn split_pool<'a>(pool: &[&'a str], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<&'a str>, Vec<&'a str>) {
    let mut v = pool.to_vec();
    v.shuffle(rng);
    let k = ((pool.len() as f64) * fraction).round() as usize;
    let held = v[..k].to_vec();
    let kept = v[k..].to_vec();
    (kept, held)
}

fn recipe(rng: &mut ChaCha8Rng, seen: &[&str], held: &[&str], use_held: bool) -> RecipeLine {
    let n = rng.gen_range(2..=4);
    let mut names: Vec<&str> = seen.choose_multiple(rng, n).copied().collect();
    if use_held {
        let slot = rng.gen_range(0..n);
        names[slot] = held.choose(rng).copied().expect("held-out pool is not empty");
    }
    let mut ingredients = Vec::with_capacity(n);
    let mut text = String::from("preheat the oven .");
    let water_after = if rng.gen_bool(0.3) { Some(rng.gen_range(0..n)) } else { None };
    for (k, name) in names.iter().enumerate() {
        let (unit, verb) = UNITS[rng.gen_range(0..UNITS.len())];
        let qty = rng.gen_range(1..=4);
        let ing = if rng.gen_bool(0.3) {
            format!("{qty} {unit} {} {name}", ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())])
        } else {
            format!("{qty} {unit} {name}")
        };
        ingredients.push(ing);
        text.push_str(&format!(" {verb} the {name} ."));
        if water_after == Some(k) {
            text.push_str(" add a cup of water .");
        }
    }
    text.push_str(" serve warm .");
    RecipeLine { ingredients, recipe: text }
}

pub fn synthetic_recipes(spec: &SyntheticSpec) -> SyntheticCorpus<RecipeLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (seen, held) = split_pool(&FOODS, spec.held_out_fraction, &mut rng);
    let [n_train, n_valid, n_test] = spec.split_sizes();
    let train = (0..n_train).map(|_| recipe(&mut rng, &seen, &held, false)).collect();
    let valid = (0..n_valid).map(|_| recipe(&mut rng, &seen, &held, !held.is_empty())).collect();
    let test = (0..n_test).map(|_| recipe(&mut rng, &seen, &held, !held.is_empty())).collect();
    let mut held_out: Vec<String> = held.iter().map(|s| s.to_string()).collect();
    held_out.sort();
    SyntheticCorpus {
        train,
        valid,
        test,
        held_out,
    }
}

const NAME_FIRST: [&str; 12] = [
    "golden", "royal", "lucky", "little", "happy", "silver", "grand", "blue", "green", "red", "old", "jade",
];
const NAME_SECOND: [&str; 10] = [
    "curry", "dragon", "garden", "kitchen", "house", "palace", "bistro", "lantern", "spoon", "oak",
];
const CUISINES: [&str; 20] = [
    "indian", "italian", "chinese", "thai", "french", "spanish", "turkish", "korean", "greek", "mexican",
    "lebanese", "japanese", "vietnamese", "british", "portuguese", "moroccan", "persian", "german", "polish",
    "african",
];
const STREETS: [&str; 12] = [
    "mill", "king", "regent", "market", "bridge", "castle", "station", "hills", "trinity", "chesterton",
    "newmarket", "histon",
];
const AREAS: [&str; 5] = ["north", "south", "east", "west", "centre"];
const ASKABLE: [&str; 4] = ["area", "address", "postcode", "phone"];

/// The generated restaurant table, one row per restaurant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub held_out_rows: Vec<usize>,
}

impl SyntheticTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
    }
}

fn make_table(rng: &mut ChaCha8Rng, rows: usize, fraction: f64) -> Result<SyntheticTable> {
    if rows > CUISINES.len() || rows > NAME_FIRST.len() * NAME_SECOND.len() {
        return Err(invalid(format!("at most {} synthetic table rows are supported", CUISINES.len())));
    }
    let mut names: Vec<String> = NAME_FIRST
        .iter()
        .flat_map(|a| NAME_SECOND.iter().map(move |b| format!("the {a} {b}")))
        .collect();
    names.shuffle(rng);
    let mut cuisines = CUISINES.to_vec();
    cuisines.shuffle(rng);
    let mut table_rows = Vec::with_capacity(rows);
    for r in 0..rows {
        let street = STREETS[rng.gen_range(0..STREETS.len())];
        table_rows.push(vec![
            names[r].clone(),
            cuisines[r].to_string(),
            AREAS[rng.gen_range(0..AREAS.len())].to_string(),
            format!("{} {street} road", 10 + r * 7 + rng.gen_range(0..7)),
            format!("cb{} {}{}{}", 1 + r % 5, r, (b'a' + rng.gen_range(0..26u8)) as char, (b'a' + (r as u8 % 26)) as char),
            format!("01223 {}", 300_000 + r * 1_000 + rng.gen_range(0..1_000)),
        ]);
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(rng);
    let k = ((rows as f64) * fraction).round() as usize;
    let mut held_out_rows = order[..k].to_vec();
    held_out_rows.sort_unstable();
    Ok(SyntheticTable {
        header: ["name", "food", "area", "address", "postcode", "phone"].map(String::from).to_vec(),
        rows: table_rows,
        held_out_rows,
    })
}

fn dialogue(rng: &mut ChaCha8Rng, table: &SyntheticTable, row: usize) -> DialogueLine {
    let cells = &table.rows[row];
    let (name, food) = (&cells[0], &cells[1]);
    let mut turns = Vec::new();
    let mut say = |speaker: Speaker, text: String| turns.push(TurnLine { speaker, text });
    say(Speaker::Machine, "hello , welcome to the restaurant system . how may i help you ?".into());
    let ask = if rng.gen_bool(0.5) {
        format!("i want a {food} restaurant .")
    } else {
        format!("i am looking for {food} food .")
    };
    say(Speaker::User, ask);
    say(Speaker::Machine, format!("{name} serves {food} food ."));
    let questions = rng.gen_range(1..=2);
    let mut attrs = ASKABLE.to_vec();
    attrs.shuffle(rng);
    for attr in attrs.into_iter().take(questions) {
        let col = table.header.iter().position(|h| h == attr).expect("askable column exists");
        say(Speaker::User, format!("what is the {attr} ?"));
        say(Speaker::Machine, format!("the {attr} of {name} is {} .", cells[col]));
    }
    say(Speaker::User, "thank you goodbye .".into());
    say(Speaker::Machine, "goodbye .".into());
    DialogueLine { turns }
}

/// Dialogues plus the table they talk about.
pub fn synthetic_dialogues(spec: &SyntheticSpec) -> Result<(SyntheticCorpus<DialogueLine>, SyntheticTable)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows = spec.table_rows;
    let table = make_table(&mut rng, rows, spec.held_out_fraction)?;
    let seen: Vec<usize> = (0..rows).filter(|r| !table.held_out_rows.contains(r)).collect();
    if seen.is_empty() {
        return Err(invalid("every table row is held out"));
    }
    let [n_train, n_valid, n_test] = spec.split_sizes();
    let pick = |rng: &mut ChaCha8Rng, allow_held: bool| -> usize {
        if allow_held && !table.held_out_rows.is_empty() && rng.gen_bool(0.5) {
            *table.held_out_rows.choose(rng).expect("non-empty")
        } else {
            *seen.choose(rng).expect("non-empty")
        }
    };
    let gen = |n: usize, allow_held: bool, rng: &mut ChaCha8Rng| -> Vec<DialogueLine> {
        (0..n)
            .map(|_| {
                let r = pick(rng, allow_held);
                dialogue(rng, &table, r)
            })
            .collect()
    };
    let train = gen(n_train, false, &mut rng);
    let valid = gen(n_valid, true, &mut rng);
    let test = gen(n_test, true, &mut rng);
    let mut held_out: Vec<String> = table
        .held_out_rows
        .iter()
        .flat_map(|&r| table.rows[r].iter().cloned())
        .filter(|c| !AREAS.contains(&c.as_str()))
        .collect();
    held_out.sort();
    Ok((
        SyntheticCorpus {
            train,
            valid,
            test,
            held_out,
        },
        table,
    ))
}

const PEOPLE: [(&str, &str); 24] = [
    ("john", "he"),
    ("peter", "he"),
    ("david", "he"),
    ("mark", "he"),
    ("paul", "he"),
    ("james", "he"),
    ("tom", "he"),
    ("sam", "he"),
    ("hugo", "he"),
    ("oscar", "he"),
    ("felix", "he"),
    ("leo", "he"),
    ("mary", "she"),
    ("anna", "she"),
    ("linda", "she"),
    ("sarah", "she"),
    ("emma", "she"),
    ("julia", "she"),
    ("clara", "she"),
    ("nina", "she"),
    ("rose", "she"),
    ("alice", "she"),
    ("vera", "she"),
    ("ruth", "she"),
];

const SOLO: [&str; 6] = [
    "{A} walked to the market .",
    "{A} bought some bread .",
    "later {A} went home .",
    "{A} read a long letter .",
    "{A} cooked dinner .",
    "then {A} sat down .",
];
const PAIR: [&str; 5] = [
    "{A} met {B} at the station .",
    "{A} thanked {B} .",
    "{A} called {B} in the evening .",
    "{A} gave {B} a small gift .",
    "{A} waited for {B} .",
];
const STRANGER: [&str; 2] = ["a man named {A} waved .", "a woman called {A} smiled ."];

struct DocBuilder {
    tokens: Vec<String>,
    mentions: Vec<MentionSpan>,
}

impl DocBuilder {
    fn sentence(&mut self, template: &str, slots: &[(String, i64)]) {
        for word in template.split_whitespace() {
            let slot = match word {
                "{A}" => Some(&slots[0]),
                "{B}" => Some(&slots[1]),
                _ => None,
            };
            match slot {
                Some((surface, entity)) => {
                    let start = self.tokens.len();
                    self.tokens.push(surface.clone());
                    self.mentions.push(MentionSpan {
                        start,
                        end: start + 1,
                        entity: *entity,
                    });
                }
                None => self.tokens.push(word.to_string()),
            }
        }
    }
}

fn coref_doc(rng: &mut ChaCha8Rng) -> CorefLine {
    let n_entities = rng.gen_range(2..=3);
    let cast: Vec<(&str, &str)> = PEOPLE.choose_multiple(rng, n_entities + 1).copied().collect();
    let ids: Vec<i64> = (0..cast.len()).map(|k| 100 + 10 * k as i64 + rng.gen_range(0..10)).collect();
    let mut doc = DocBuilder {
        tokens: Vec::new(),
        mentions: Vec::new(),
    };
    let mut introduced = vec![false; n_entities];
    let mention = |k: usize, introduced: &mut Vec<bool>, rng: &mut ChaCha8Rng, subject: bool| -> (String, i64) {
        let (name, pronoun) = cast[k];
        let surface = if introduced[k] && subject && rng.gen_bool(0.2) { pronoun } else { name };
        introduced[k] = true;
        (surface.to_string(), ids[k])
    };
    let sentences = rng.gen_range(6..=9);
    let stranger_at = rng.gen_range(0..sentences);
    for s in 0..sentences {
        if s == stranger_at {
            let t = STRANGER[rng.gen_range(0..STRANGER.len())];
            doc.sentence(t, &[(cast[n_entities].0.to_string(), ids[n_entities])]);
            continue;
        }
        if rng.gen_bool(0.5) {
            let k = rng.gen_range(0..n_entities);
            let t = SOLO[rng.gen_range(0..SOLO.len())];
            let a = mention(k, &mut introduced, rng, true);
            doc.sentence(t, &[a]);
        } else {
            let mut pair: Vec<usize> = (0..n_entities).collect();
            pair.shuffle(rng);
            let t = PAIR[rng.gen_range(0..PAIR.len())];
            let a = mention(pair[0], &mut introduced, rng, true);
            let b = mention(pair[1], &mut introduced, rng, false);
            doc.sentence(t, &[a, b]);
        }
    }
    CorefLine {
        tokens: doc.tokens,
        mentions: doc.mentions,
    }
}

pub fn synthetic_coref(spec: &SyntheticSpec) -> SyntheticCorpus<CorefLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [n_train, n_valid, n_test] = spec.split_sizes();
    let mut gen = |n: usize| (0..n).map(|_| coref_doc(&mut rng)).collect::<Vec<_>>();
    let train = gen(n_train);
    let valid = gen(n_valid);
    let test = gen(n_test);
    SyntheticCorpus {
        train,
        valid,
        test,
        held_out: Vec::new(),
    }
}

/// Number of table rows in the synthetic dialogue fixture.
pub const TABLE_ROWS: usize = 10;

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_splits<T: Serialize>(dir: &Path, task: Task, corpus: &SyntheticCorpus<T>, manifest: &mut Manifest) -> Result<()> {
    let mut next = 0;
    for split in Split::ALL {
        let items = corpus.split(split);
        let file = task.split_file(split);
        write_jsonl(&dir.join(&file), items)?;
        manifest.files.insert(split.to_string(), file);
        manifest.splits.insert(split.to_string(), (next..next + items.len()).collect());
        next += items.len();
    }
    Ok(())
}

/// Writes the fixture for `spec.task` into `dir` and returns its manifest.
pub fn make_synthetic(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest {
        task: spec.task,
        seed: Some(spec.seed),
        source: "synthetic".into(),
        files: BTreeMap::new(),
        splits: BTreeMap::new(),
        held_out: Vec::new(),
    };
    match spec.task {
        Task::Recipe => {
            let corpus = synthetic_recipes(spec);
            write_splits(dir, spec.task, &corpus, &mut manifest)?;
            manifest.held_out = corpus.held_out;
        }
        Task::Dialogue => {
            let (corpus, table) = synthetic_dialogues(spec)?;
            write_splits(dir, spec.task, &corpus, &mut manifest)?;
            let file = spec.task.table_file();
            fs::write(dir.join(&file), table.to_csv()?)?;
            manifest.files.insert("table".into(), file);
            manifest.held_out = corpus.held_out;
        }
        Task::Coref => {
            let corpus = synthetic_coref(spec);
            write_splits(dir, spec.task, &corpus, &mut manifest)?;
        }
    }
    manifest.save(dir)?;
    Ok(manifest)
}
