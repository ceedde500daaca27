//! Synthetic grid-world question answering.
//!
//! A scene is a `G x G` grid whose cells hold at most one coloured shape.
//! Questions come from fixed templates of reasoning depth 1 to 3, where
//! depth counts the referential hops needed to reach the answer.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::files;
use crate::tensor::{SeededRng, Tensor};

/// Feature channels per cell: occupancy, three shape slots, four colour slots.
pub const CHANNELS: usize = 8;
pub const ANNOTATORS: usize = 10;
/// Instantiation attempts per scene before asking for a new scene.
pub const MAX_ATTEMPTS: usize = 100;

pub const ANSWERS: [&str; 9] = [
    "red", "green", "blue", "yellow", "circle", "square", "triangle", "yes", "no",
];
pub const YES: usize = 7;
pub const NO: usize = 8;

/// Every word any template can produce.
pub const LEXICON: [&str; 20] = [
    "what", "color", "shape", "is", "the", "object", "there", "a", "left", "right", "of", "above",
    "below", "red", "green", "blue", "yellow", "circle", "square", "triangle",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ANSWERS[4 + self.index()]
    }

    pub fn answer_id(self) -> usize {
        4 + self.index()
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ANSWERS[self.index()]
    }

    pub fn answer_id(self) -> usize {
        self.index()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    /// Row-major cell index.
    pub cell: usize,
    pub shape: Shape,
    pub color: Color,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    pub grid: usize,
    /// Sorted by cell.
    pub objects: Vec<Object>,
}

impl Scene {
    pub fn new(grid: usize, mut objects: Vec<Object>) -> Result<Self> {
        if grid < 2 {
            return Err(Error::config("grid", "must be at least 2"));
        }
        objects.sort_by_key(|o| o.cell);
        if objects.iter().any(|o| o.cell >= grid * grid) {
            return Err(Error::contract("scene object outside the grid"));
        }
        if objects.windows(2).any(|w| w[0].cell == w[1].cell) {
            return Err(Error::contract("two scene objects share a cell"));
        }
        Ok(Scene { grid, objects })
    }

    pub fn locations(&self) -> usize {
        self.grid * self.grid
    }

    pub fn at(&self, cell: usize) -> Option<&Object> {
        self.objects
            .binary_search_by_key(&cell, |o| o.cell)
            .ok()
            .map(|i| &self.objects[i])
    }

    /// Canonical text form; equal scenes have equal keys.
    pub fn key(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }
}

/// Samples an object count uniformly in `[min_objects, max_objects]`, then
/// distinct cells and independent uniform attributes.
pub fn generate_scene(rng: &mut SeededRng, grid: usize, min_objects: usize, max_objects: usize) -> Result<Scene> {
    if grid < 2 {
        return Err(Error::config("grid", "must be at least 2"));
    }
    let cells = grid * grid;
    if min_objects < 2 || min_objects > max_objects || max_objects > cells - 1 {
        return Err(Error::config(
            "objects",
            format!("need 2 <= min ({min_objects}) <= max ({max_objects}) <= {}", cells - 1),
        ));
    }
    let count = rng.int_inclusive(min_objects, max_objects);
    let mut all: Vec<usize> = (0..cells).collect();
    rng.shuffle(&mut all);
    let objects = all[..count]
        .iter()
        .map(|&cell| Object {
            cell,
            shape: *rng.choose(&Shape::ALL),
            color: *rng.choose(&Color::ALL),
        })
        .collect();
    Scene::new(grid, objects)
}

/// `P x L` feature map, one column per cell in row-major order.
pub fn render_features(scene: &Scene) -> Tensor {
    let l = scene.locations();
    let mut t = Tensor::zeros(&[CHANNELS, l]);
    let d = t.data_mut();
    for o in &scene.objects {
        d[o.cell] = 1.0;
        d[(1 + o.shape.index()) * l + o.cell] = 1.0;
        d[(4 + o.color.index()) * l + o.cell] = 1.0;
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Left,
    Right,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::Left, Relation::Right, Relation::Above, Relation::Below];

    pub fn phrase(self) -> &'static str {
        match self {
            Relation::Left => "left of",
            Relation::Right => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Relation::Left => (0, -1),
            Relation::Right => (0, 1),
            Relation::Above => (-1, 0),
            Relation::Below => (1, 0),
        }
    }
}

/// The nearest object strictly in direction `rel` from `cell`, staying in
/// the same row or column.
pub fn neighbor(scene: &Scene, cell: usize, rel: Relation) -> Option<&Object> {
    let g = scene.grid as isize;
    let (dr, dc) = rel.delta();
    let (mut r, mut c) = ((cell / scene.grid) as isize, (cell % scene.grid) as isize);
    loop {
        r += dr;
        c += dc;
        if r < 0 || c < 0 || r >= g || c >= g {
            return None;
        }
        if let Some(o) = scene.at((r * g + c) as usize) {
            return Some(o);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attribute {
    Color,
    Shape,
}

impl Attribute {
    fn word(self) -> &'static str {
        match self {
            Attribute::Color => "color",
            Attribute::Shape => "shape",
        }
    }

    fn of(self, o: &Object) -> usize {
        match self {
            Attribute::Color => o.color.answer_id(),
            Attribute::Shape => o.shape.answer_id(),
        }
    }
}

/// A template instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Question {
    /// "what color is the <shape>"
    ColorOf(Shape),
    /// "what shape is the <color> object"
    ShapeOf(Color),
    /// "is there a <color> <shape>"
    Exists(Color, Shape),
    /// "what <attr> is the object <rel_n> ... the object <rel_1> the <shape>";
    /// `hops[0]` is applied to the anchor first.
    Relational {
        attr: Attribute,
        anchor: Shape,
        hops: Vec<Relation>,
    },
}

impl Question {
    pub fn depth(&self) -> usize {
        match self {
            Question::Relational { hops, .. } => 1 + hops.len(),
            _ => 1,
        }
    }

    /// Answer id, or `None` if a referent is missing or ambiguous.
    pub fn answer(&self, scene: &Scene) -> Option<usize> {
        let unique_shape = |s: Shape| {
            let mut it = scene.objects.iter().filter(move |o| o.shape == s);
            match (it.next(), it.next()) {
                (Some(o), None) => Some(o),
                _ => None,
            }
        };
        match self {
            Question::ColorOf(s) => unique_shape(*s).map(|o| o.color.answer_id()),
            Question::ShapeOf(c) => {
                let mut it = scene.objects.iter().filter(|o| o.color == *c);
                match (it.next(), it.next()) {
                    (Some(o), None) => Some(o.shape.answer_id()),
                    _ => None,
                }
            }
            Question::Exists(c, s) => Some(
                if scene.objects.iter().any(|o| o.color == *c && o.shape == *s) {
                    YES
                } else {
                    NO
                },
            ),
            Question::Relational { attr, anchor, hops } => {
                let mut cur = unique_shape(*anchor)?;
                let start = cur.cell;
                for &h in hops {
                    cur = neighbor(scene, cur.cell, h)?;
                }
                if hops.len() > 1 && cur.cell == start {
                    return None;
                }
                Some(attr.of(cur))
            }
        }
    }
}

impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Question::ColorOf(s) => write!(f, "what color is the {}", s.name()),
            Question::ShapeOf(c) => write!(f, "what shape is the {} object", c.name()),
            Question::Exists(c, s) => write!(f, "is there a {} {}", c.name(), s.name()),
            Question::Relational { attr, anchor, hops } => {
                write!(f, "what {} is the object", attr.word())?;
                for (i, h) in hops.iter().rev().enumerate() {
                    if i > 0 {
                        f.write_str(" the object")?;
                    }
                    write!(f, " {}", h.phrase())?;
                }
                write!(f, " the {}", anchor.name())
            }
        }
    }
}

/// A posed question with its tokenization and answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Posed {
    pub question: Question,
    pub text: String,
    pub tokens: Vec<usize>,
    pub answer: usize,
}

/// One random template instance, or `None` when no absent pair turned up for
/// a "no" answer.
fn sample_question(scene: &Scene, depth: usize, rng: &mut SeededRng) -> Option<Question> {
    let q = match depth {
        1 => match rng.below(3) {
            0 => Question::ColorOf(*rng.choose(&Shape::ALL)),
            1 => Question::ShapeOf(*rng.choose(&Color::ALL)),
            _ if rng.below(2) == 0 => {
                let o = rng.choose(&scene.objects);
                Question::Exists(o.color, o.shape)
            }
            _ => (0..MAX_ATTEMPTS)
                .map(|_| Question::Exists(*rng.choose(&Color::ALL), *rng.choose(&Shape::ALL)))
                .find(|q| q.answer(scene) == Some(NO))?,
        },
        _ => {
            let attr = if rng.below(2) == 0 {
                Attribute::Color
            } else {
                Attribute::Shape
            };
            let anchor = *rng.choose(&Shape::ALL);
            let hops = (1..depth).map(|_| *rng.choose(&Relation::ALL)).collect();
            Question::Relational { attr, anchor, hops }
        }
    };
    Some(q)
}

/// Samples a template of the given depth and instantiates it until every
/// referent exists and is unique. `Ok(None)` means no valid question was
/// found within [`MAX_ATTEMPTS`]; the caller should draw a new scene.
///
/// "is there" questions are yes and no with equal odds: the yes branch copies
/// an object of the scene, the no branch draws an absent pair.
pub fn pose_question(scene: &Scene, depth: usize, rng: &mut SeededRng, vocab: &Vocabulary) -> Result<Option<Posed>> {
    if !(1..=3).contains(&depth) {
        return Err(Error::config("depth", format!("must be 1, 2 or 3, got {depth}")));
    }
    if scene.objects.is_empty() {
        return Ok(None);
    }
    for _ in 0..MAX_ATTEMPTS {
        let Some(q) = sample_question(scene, depth, rng) else {
            continue;
        };
        let Some(answer) = q.answer(scene) else {
            continue;
        };
        let text = q.to_string();
        let tokens = vocab.tokenize(&text)?;
        return Ok(Some(Posed {
            question: q,
            text,
            tokens,
            answer,
        }));
    }
    Ok(None)
}

/// The template lexicon behind `<pad>` and `<unk>`.
pub fn lexicon_vocabulary() -> Vocabulary {
    Vocabulary::new(LEXICON)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QAExample {
    pub id: usize,
    pub scene: Scene,
    /// `CHANNELS x L`.
    pub features: Tensor,
    pub question: Vec<usize>,
    pub question_text: String,
    pub answer: usize,
    pub depth: usize,
    pub annotators: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub seed: u64,
    pub examples: Vec<QAExample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub grid: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Proportions of depth 1, 2 and 3 questions.
    pub depths: [f64; 3],
    pub min_objects: usize,
    pub max_objects: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            grid: 4,
            train: 8000,
            val: 1000,
            test: 1000,
            depths: [0.4, 0.4, 0.2],
            min_objects: 3,
            max_objects: 8,
            seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, n) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if n < 1 {
                return Err(Error::config(key, "split size must be at least 1"));
            }
        }
        if self.depths.iter().any(|&p| !(p >= 0.0) || !p.is_finite())
            || (self.depths.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config("depths", "proportions must be non-negative and sum to 1"));
        }
        let cells = self.grid * self.grid;
        if self.grid < 2 || self.min_objects < 2 || self.min_objects > self.max_objects || self.max_objects > cells - 1 {
            return Err(Error::config(
                "objects",
                format!(
                    "need grid >= 2 and 2 <= min ({}) <= max ({}) <= {}",
                    self.min_objects,
                    self.max_objects,
                    cells.saturating_sub(1)
                ),
            ));
        }
        Ok(())
    }
}

/// Splits `n` into per-depth counts: floors of `n p_d`, with the remainder
/// going to the largest fractional parts (lower depth first on ties).
pub fn depth_quotas(n: usize, depths: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = depths.iter().map(|p| p * n as f64).collect();
    let mut counts = [0usize; 3];
    for d in 0..3 {
        counts[d] = exact[d].floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &d in order.iter().take(n.saturating_sub(assigned)) {
        counts[d] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
    pub vocab: Vocabulary,
    pub answers: Vec<String>,
}

/// Generates train, validation and test splits with one question per scene.
/// No scene appears twice anywhere in the dataset.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let vocab = lexicon_vocabulary();
    let mut rng = SeededRng::new(config.seed);
    let mut seen = HashSet::new();
    let mut next_id = 0;
    let mut make = |name: &str, n: usize, rng: &mut SeededRng| -> Result<DatasetSplit> {
        let quotas = depth_quotas(n, &config.depths);
        let mut plan: Vec<usize> = (0..3).flat_map(|d| std::iter::repeat_n(d + 1, quotas[d])).collect();
        rng.shuffle(&mut plan);
        let mut examples = Vec::with_capacity(n);
        for depth in plan {
            loop {
                let scene = generate_scene(rng, config.grid, config.min_objects, config.max_objects)?;
                let key = scene.key();
                if seen.contains(&key) {
                    continue;
                }
                let Some(posed) = pose_question(&scene, depth, rng, &vocab)? else {
                    continue;
                };
                seen.insert(key);
                examples.push(QAExample {
                    id: next_id,
                    features: render_features(&scene),
                    scene,
                    question: posed.tokens,
                    question_text: posed.text,
                    answer: posed.answer,
                    depth,
                    annotators: vec![posed.answer; ANNOTATORS],
                });
                next_id += 1;
                break;
            }
        }
        Ok(DatasetSplit {
            name: name.to_string(),
            seed: config.seed,
            examples,
        })
    };
    let train = make("train", config.train, &mut rng)?;
    let val = make("val", config.val, &mut rng)?;
    let test = make("test", config.test, &mut rng)?;
    Ok(Dataset {
        train,
        val,
        test,
        vocab,
        answers: ANSWERS.iter().map(|s| s.to_string()).collect(),
    })
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: usize,
    scene: Scene,
    question: Vec<usize>,
    question_text: String,
    answer: usize,
    depth: usize,
    annotators: Vec<usize>,
}

pub fn split_to_jsonl(split: &DatasetSplit) -> String {
    let mut out = String::new();
    for ex in &split.examples {
        let rec = Record {
            id: ex.id,
            scene: ex.scene.clone(),
            question: ex.question.clone(),
            question_text: ex.question_text.clone(),
            answer: ex.answer,
            depth: ex.depth,
            annotators: ex.annotators.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses a split file, re-rendering every feature map from its scene.
pub fn split_from_jsonl(text: &str, name: &str, path: &Path, vocab: &Vocabulary) -> Result<DatasetSplit> {
    let mut examples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(path, format!("line {}: {msg}", lineno + 1));
        let rec: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let scene = Scene::new(rec.scene.grid, rec.scene.objects).map_err(|e| bad(e.to_string()))?;
        if rec.question.is_empty() || rec.question.iter().any(|&t| t >= vocab.len()) {
            return Err(bad("question token id outside the vocabulary".into()));
        }
        if rec.answer >= ANSWERS.len() || rec.annotators.is_empty() || rec.annotators.iter().any(|&a| a >= ANSWERS.len()) {
            return Err(bad("answer id outside the answer set".into()));
        }
        examples.push(QAExample {
            id: rec.id,
            features: render_features(&scene),
            scene,
            question: rec.question,
            question_text: rec.question_text,
            answer: rec.answer,
            depth: rec.depth,
            annotators: rec.annotators,
        });
    }
    if examples.is_empty() {
        return Err(Error::format(path, "split file holds no examples"));
    }
    Ok(DatasetSplit {
        name: name.to_string(),
        seed: 0,
        examples,
    })
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

impl Dataset {
    /// Writes `train.jsonl`, `val.jsonl`, `test.jsonl`, `vocab.txt` and
    /// `answers.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in [&self.train, &self.val, &self.test] {
            let path = dir.join(format!("{}.jsonl", split.name));
            files::write_atomic(&path, split_to_jsonl(split).as_bytes())?;
        }
        files::write_atomic(&dir.join("vocab.txt"), self.vocab.to_text().as_bytes())?;
        let mut answers = self.answers.join("\n");
        answers.push('\n');
        files::write_atomic(&dir.join("answers.txt"), answers.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
        let answers_path = dir.join("answers.txt");
        let answers: Vec<String> = files::read_to_string(&answers_path)?
            .lines()
            .map(str::to_string)
            .collect();
        if answers != ANSWERS {
            return Err(Error::format(answers_path, "answer set differs from the built-in one"));
        }
        let load = |name: &str| -> Result<DatasetSplit> {
            let path = dir.join(format!("{name}.jsonl"));
            split_from_jsonl(&files::read_to_string(&path)?, name, &path, &vocab)
        };
        Ok(Dataset {
            train: load("train")?,
            val: load("val")?,
            test: load("test")?,
            vocab: vocab.clone(),
            answers,
        })
    }

    pub fn split(&self, name: &str) -> Option<&DatasetSplit> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(cell: usize, shape: Shape, color: Color) -> Object {
        Object { cell, shape, color }
    }

    #[test]
    fn scene_bounds() {
        let mut rng = SeededRng::new(1);
        let s = generate_scene(&mut rng, 4, 2, 2).unwrap();
        assert_eq!(s.objects.len(), 2);
        assert!(generate_scene(&mut rng, 4, 1, 3).is_err());
        assert!(generate_scene(&mut rng, 4, 3, 16).is_err());
        assert!(generate_scene(&mut rng, 4, 5, 4).is_err());
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let a = generate_scene(&mut SeededRng::new(7), 4, 2, 15).unwrap();
        let b = generate_scene(&mut SeededRng::new(7), 4, 2, 15).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn render_examples() {
        let empty = Scene::new(4, vec![]).unwrap();
        assert!(render_features(&empty).data().iter().all(|&v| v == 0.0));
        let s = Scene::new(4, vec![obj(0, Shape::Square, Color::Red)]).unwrap();
        let f = render_features(&s);
        assert_eq!(f.column(0), vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(f.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_channels_count_objects() {
        let s = generate_scene(&mut SeededRng::new(3), 4, 5, 9).unwrap();
        let f = render_features(&s);
        let shape_total: f64 = (1..4).map(|r| (0..16).map(|c| f.get(r, c)).sum::<f64>()).sum();
        assert_eq!(shape_total as usize, s.objects.len());
    }

    #[test]
    fn template_semantics_on_constructed_scenes() {
        let s = Scene::new(
            4,
            vec![
                obj(4, Shape::Triangle, Color::Blue),
                obj(5, Shape::Square, Color::Red),
                obj(10, Shape::Circle, Color::Green),
            ],
        )
        .unwrap();
        assert_eq!(Question::ColorOf(Shape::Square).answer(&s), Some(Color::Red.answer_id()));
        assert_eq!(Question::Exists(Color::Green, Shape::Circle).answer(&s), Some(YES));
        assert_eq!(Question::Exists(Color::Green, Shape::Square).answer(&s), Some(NO));
        let q = Question::Relational {
            attr: Attribute::Color,
            anchor: Shape::Square,
            hops: vec![Relation::Left],
        };
        assert_eq!(q.to_string(), "what color is the object left of the square");
        assert_eq!(q.answer(&s), Some(Color::Blue.answer_id()));
        let none = Question::Relational {
            attr: Attribute::Color,
            anchor: Shape::Square,
            hops: vec![Relation::Above],
        };
        assert_eq!(none.answer(&s), None);
    }

    #[test]
    fn chained_relation_text_and_answer() {
        // row 0: G . . .   row 1: T . S .
        let s = Scene::new(
            4,
            vec![
                obj(0, Shape::Circle, Color::Green),
                obj(4, Shape::Triangle, Color::Blue),
                obj(6, Shape::Square, Color::Red),
            ],
        )
        .unwrap();
        let q = Question::Relational {
            attr: Attribute::Shape,
            anchor: Shape::Square,
            hops: vec![Relation::Left, Relation::Above],
        };
        assert_eq!(q.to_string(), "what shape is the object above the object left of the square");
        assert_eq!(q.answer(&s), Some(Shape::Circle.answer_id()));
        let back_to_anchor = Question::Relational {
            attr: Attribute::Color,
            anchor: Shape::Square,
            hops: vec![Relation::Left, Relation::Right],
        };
        assert_eq!(back_to_anchor.answer(&s), None);
        let off_grid = Question::Relational {
            attr: Attribute::Color,
            anchor: Shape::Circle,
            hops: vec![Relation::Above, Relation::Left],
        };
        assert_eq!(off_grid.answer(&s), None);
    }

    #[test]
    fn ambiguous_anchor_is_rejected() {
        let s = Scene::new(
            4,
            vec![obj(0, Shape::Square, Color::Red), obj(3, Shape::Square, Color::Blue)],
        )
        .unwrap();
        assert_eq!(Question::ColorOf(Shape::Square).answer(&s), None);
    }

    #[test]
    fn quotas_follow_largest_remainder() {
        assert_eq!(depth_quotas(1000, &[0.4, 0.4, 0.2]), [400, 400, 200]);
        assert_eq!(depth_quotas(7, &[0.4, 0.4, 0.2]), [3, 3, 1]);
        assert_eq!(depth_quotas(1, &[0.4, 0.4, 0.2]), [1, 0, 0]);
        let q = depth_quotas(999, &[1.0 / 3.0; 3]);
        assert_eq!(q.iter().sum::<usize>(), 999);
    }

    #[test]
    fn small_dataset_roundtrip() {
        let cfg = DatasetConfig {
            train: 30,
            val: 10,
            test: 10,
            ..Default::default()
        };
        let ds = build_dataset(&cfg).unwrap();
        assert_eq!(ds.train.examples.len(), 30);
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.train.examples, ds.train.examples);
        assert_eq!(back.test.examples, ds.test.examples);
        assert_eq!(back.vocab, ds.vocab);
    }

    #[test]
    fn rejects_bad_configs() {
        let zero = DatasetConfig {
            train: 0,
            ..Default::default()
        };
        assert!(build_dataset(&zero).is_err());
        let mix = DatasetConfig {
            depths: [0.5, 0.5, 0.5],
            ..Default::default()
        };
        assert!(build_dataset(&mix).is_err());
    }
}
