//! Brute-force question interpreter: parses question text and evaluates it
//! directly against a scene by scanning every object, without the
//! generator's template types or cell-walking relation search.

use rau_core::taskgen::{Object, Scene, ANSWERS};

#[derive(Debug, PartialEq, Eq)]
pub enum Verdict {
    Answer(usize),
    /// A referent is missing or not unique.
    Invalid(String),
}

fn answer_id(word: &str) -> usize {
    ANSWERS.iter().position(|a| *a == word).expect("answer word")
}

fn shape_of(o: &Object) -> String {
    format!("{:?}", o.shape).to_lowercase()
}

fn color_of(o: &Object) -> String {
    format!("{:?}", o.color).to_lowercase()
}

fn unique<'a>(scene: &'a Scene, pred: impl Fn(&Object) -> bool, what: &str) -> Result<&'a Object, String> {
    let hits: Vec<&Object> = scene.objects.iter().filter(|o| pred(o)).collect();
    match hits.len() {
        1 => Ok(hits[0]),
        n => Err(format!("{n} objects match {what}")),
    }
}

/// Nearest object strictly in direction `rel`, sharing the row (left/right)
/// or column (above/below), found by scanning all objects.
fn related<'a>(scene: &'a Scene, from: &Object, rel: &str) -> Result<&'a Object, String> {
    let g = scene.grid as i64;
    let (r0, c0) = (from.cell as i64 / g, from.cell as i64 % g);
    let mut best: Option<(i64, &Object)> = None;
    for o in &scene.objects {
        let (r, c) = (o.cell as i64 / g, o.cell as i64 % g);
        let dist = match rel {
            "left" if r == r0 && c < c0 => c0 - c,
            "right" if r == r0 && c > c0 => c - c0,
            "above" if c == c0 && r < r0 => r0 - r,
            "below" if c == c0 && r > r0 => r - r0,
            _ => continue,
        };
        if best.is_none_or(|(d, _)| dist < d) {
            best = Some((dist, o));
        }
    }
    best.map(|(_, o)| o).ok_or_else(|| format!("nothing {rel} of cell {}", from.cell))
}

pub fn interpret(scene: &Scene, text: &str) -> Verdict {
    match eval(scene, text) {
        Ok(a) => Verdict::Answer(a),
        Err(e) => Verdict::Invalid(e),
    }
}

fn eval(scene: &Scene, text: &str) -> Result<usize, String> {
    let w: Vec<&str> = text.split_whitespace().collect();
    match w.as_slice() {
        ["what", "color", "is", "the", shape] => {
            let o = unique(scene, |o| shape_of(o) == *shape, shape)?;
            Ok(answer_id(&color_of(o)))
        }
        ["what", "shape", "is", "the", color, "object"] => {
            let o = unique(scene, |o| color_of(o) == *color, color)?;
            Ok(answer_id(&shape_of(o)))
        }
        ["is", "there", "a", color, shape] => {
            let found = scene
                .objects
                .iter()
                .any(|o| color_of(o) == *color && shape_of(o) == *shape);
            Ok(answer_id(if found { "yes" } else { "no" }))
        }
        ["what", attr, "is", "the", "object", rest @ ..] => {
            let mut rels = Vec::new();
            let mut i = 0;
            let anchor;
            loop {
                let rel = match rest.get(i).copied() {
                    Some(r @ ("left" | "right")) if rest.get(i + 1) == Some(&"of") => {
                        i += 2;
                        r
                    }
                    Some(r @ ("above" | "below")) => {
                        i += 1;
                        r
                    }
                    other => return Err(format!("unparsable relation {other:?} in `{text}`")),
                };
                rels.push(rel);
                match (rest.get(i), rest.get(i + 1)) {
                    (Some(&"the"), Some(&"object")) => i += 2,
                    (Some(&"the"), Some(shape)) if i + 2 == rest.len() => {
                        anchor = *shape;
                        break;
                    }
                    _ => return Err(format!("unparsable question `{text}`")),
                }
            }
            let start = unique(scene, |o| shape_of(o) == anchor, anchor)?;
            let mut cur = start;
            for rel in rels.iter().rev() {
                cur = related(scene, cur, rel)?;
            }
            if rels.len() > 1 && cur.cell == start.cell {
                return Err("chain returns to its anchor".into());
            }
            match *attr {
                "color" => Ok(answer_id(&color_of(cur))),
                "shape" => Ok(answer_id(&shape_of(cur))),
                other => Err(format!("unknown attribute {other}")),
            }
        }
        _ => Err(format!("unknown template `{text}`")),
    }
}

/// Number of relation hops plus one.
pub fn depth_of(text: &str) -> usize {
    let w: Vec<&str> = text.split_whitespace().collect();
    if w.len() > 5 && w[0] == "what" && w[4] == "object" {
        1 + w.iter().filter(|t| matches!(**t, "left" | "right" | "above" | "below")).count()
    } else {
        1
    }
}
