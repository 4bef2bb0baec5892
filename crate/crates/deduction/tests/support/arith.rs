//! Reads statement sentences back into equations and solves them, knowing
//! only the entity names; the generator's stored values are never consulted.

#![allow(dead_code)]

use std::collections::HashMap;

const UP: [&str; 6] = ["more", "older", "faster", "longer", "hotter", "expensive"];
const DOWN: [&str; 6] = ["cheaper", "younger", "slower", "shorter", "colder", "fewer"];

enum Eq {
    Value(String, i64),
    Diff(String, String, i64),
}

fn parse(sentence: &str, names: &[String]) -> Eq {
    let mut found: Vec<(usize, &String)> = names
        .iter()
        .filter_map(|n| sentence.find(n.as_str()).map(|i| (i, n)))
        .collect();
    found.sort();
    let digits: String = sentence.chars().filter(|c| c.is_ascii_digit()).collect();
    let number: i64 = digits.parse().expect("one number per statement");
    let words: Vec<&str> = sentence.split(|c: char| !c.is_alphanumeric()).collect();
    let up = words.iter().any(|w| UP.contains(w));
    let down = words.iter().any(|w| DOWN.contains(w));
    match found.as_slice() {
        [(_, e)] => Eq::Value((*e).clone(), number),
        [(_, a), (_, b)] => {
            assert!(up ^ down, "direction of {sentence:?}");
            Eq::Diff(
                (*a).clone(),
                (*b).clone(),
                if up { number } else { -number },
            )
        }
        other => panic!("{sentence:?} names {} entities", other.len()),
    }
}

/// Value of `target` implied by `sentences`, if determined.
pub fn solve(sentences: &[&str], names: &[String], target: &str) -> Option<i64> {
    let eqs: Vec<Eq> = sentences.iter().map(|s| parse(s, names)).collect();
    let mut known: HashMap<String, i64> = HashMap::new();
    loop {
        let mut changed = false;
        for eq in &eqs {
            match eq {
                Eq::Value(e, v) => {
                    if known.insert(e.clone(), *v).is_none() {
                        changed = true;
                    }
                }
                Eq::Diff(a, b, d) => match (known.get(a).copied(), known.get(b).copied()) {
                    (None, Some(vb)) => {
                        known.insert(a.clone(), vb + d);
                        changed = true;
                    }
                    (Some(va), None) => {
                        known.insert(b.clone(), va - d);
                        changed = true;
                    }
                    _ => {}
                },
            }
        }
        if !changed {
            return known.get(target).copied();
        }
    }
}
