//! Term frequencies and person mentions within ROIs.
//!
//! Every count is a per-voxel presence count: a lemma appearing twice in
//! one caption counts once. Fractions divide by the ROI size, so voxels
//! without a caption count as not containing the term.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{AnalysisError, Lexicon, Pos, RoiMask};
use crate::caption_retrieval::{normalize_caption, VoxelCaptionSet};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermRow {
    pub lemma: String,
    pub count: usize,
    /// `count / |roi|`.
    pub fraction: f64,
}

/// Distinct lemmas of `pos` in one caption.
pub fn caption_lemmas<'a>(text: &str, lex: &'a Lexicon, pos: Pos) -> BTreeSet<&'a str> {
    lex.lemmas_in(&normalize_caption(text), pos)
        .into_iter()
        .map(|(_, l)| l)
        .collect()
}

fn roi_texts<'c>(captions: &'c VoxelCaptionSet, roi: &RoiMask) -> impl Iterator<Item = &'c str> + 'c {
    let ids = roi.voxel_ids.clone();
    ids.into_iter().filter_map(move |v| captions.text_of(v))
}

/// The `top` most frequent lemmas of `pos` over the ROI's captions, sorted
/// by count descending then lemma ascending.
pub fn top_terms(
    captions: &VoxelCaptionSet,
    roi: &RoiMask,
    lex: &Lexicon,
    pos: Pos,
    top: usize,
) -> Result<Vec<TermRow>, AnalysisError> {
    roi.require_nonempty()?;
    if lex.is_empty() {
        return Err(AnalysisError::EmptyLexicon);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for text in roi_texts(captions, roi) {
        for l in caption_lemmas(text, lex, pos) {
            *counts.entry(l).or_default() += 1;
        }
    }
    let mut rows: Vec<TermRow> = counts
        .into_iter()
        .map(|(lemma, count)| TermRow {
            lemma: lemma.to_string(),
            count,
            fraction: count as f64 / roi.len() as f64,
        })
        .collect();
    // BTreeMap order already breaks ties by lemma; the sort is stable.
    rows.sort_by(|a, b| b.count.cmp(&a.count));
    rows.truncate(top);
    Ok(rows)
}

pub fn terms_csv(rows: &[TermRow]) -> String {
    let mut out = String::from("lemma,count,fraction\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6}\n", r.lemma, r.count, r.fraction));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonMention {
    None,
    Single,
    Multiple,
}

/// Whether a caption mentions people, and whether one or several.
///
/// A caption mentions several people when any person noun appears in a form
/// different from its lemma (a plural such as "men") or when two or more
/// distinct person lemmas appear.
pub fn person_mention(text: &str, lex: &Lexicon) -> PersonMention {
    let hits: Vec<(String, &str)> = lex
        .lemmas_in(&normalize_caption(text), Pos::Noun)
        .into_iter()
        .filter(|(_, l)| lex.is_person(l))
        .collect();
    if hits.is_empty() {
        return PersonMention::None;
    }
    let plural = hits.iter().any(|(s, l)| s != l);
    let distinct: BTreeSet<&str> = hits.iter().map(|(_, l)| *l).collect();
    if plural || distinct.len() >= 2 {
        PersonMention::Multiple
    } else {
        PersonMention::Single
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PersonSummary {
    pub roi: String,
    pub voxels: usize,
    pub captioned: usize,
    pub person: usize,
    pub single: usize,
    pub multiple: usize,
    /// `person / voxels`.
    pub fraction: f64,
}

pub fn person_summary(
    captions: &VoxelCaptionSet,
    roi: &RoiMask,
    lex: &Lexicon,
) -> Result<PersonSummary, AnalysisError> {
    roi.require_nonempty()?;
    if lex.person_nouns().is_empty() {
        return Err(AnalysisError::EmptyPersonList);
    }
    let (mut captioned, mut single, mut multiple) = (0, 0, 0);
    for text in roi_texts(captions, roi) {
        captioned += 1;
        match person_mention(text, lex) {
            PersonMention::None => {}
            PersonMention::Single => single += 1,
            PersonMention::Multiple => multiple += 1,
        }
    }
    let person = single + multiple;
    Ok(PersonSummary {
        roi: roi.name.clone(),
        voxels: roi.len(),
        captioned,
        person,
        single,
        multiple,
        fraction: person as f64 / roi.len() as f64,
    })
}

/// Fraction of ROI voxels whose caption contains a person noun.
pub fn person_fraction(captions: &VoxelCaptionSet, roi: &RoiMask, lex: &Lexicon) -> Result<f64, AnalysisError> {
    Ok(person_summary(captions, roi, lex)?.fraction)
}

pub fn person_csv(rows: &[PersonSummary]) -> String {
    let mut out = String::from("roi,voxels,captioned,person,single,multiple,person_fraction\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6}\n",
            r.roi, r.voxels, r.captioned, r.person, r.single, r.multiple, r.fraction
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption_retrieval::{Candidate, VoxelCaption};

    pub(crate) fn set(texts: &[&str]) -> VoxelCaptionSet {
        VoxelCaptionSet {
            voxels: texts
                .iter()
                .enumerate()
                .map(|(i, t)| VoxelCaption {
                    voxel_id: i,
                    caption_id: i as u64,
                    text: t.to_string(),
                    similarity: 1.0,
                    candidates: vec![Candidate {
                        caption_id: i as u64,
                        similarity: 1.0,
                    }],
                    chosen_repeat: None,
                    repeats: Vec::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn lemma_counted_once_per_caption() {
        let lex = Lexicon::default_english();
        let rows = top_terms(&set(&["a man and a man"]), &RoiMask::whole_brain(1), &lex, Pos::Noun, 50).unwrap();
        assert_eq!(
            rows,
            vec![TermRow {
                lemma: "man".into(),
                count: 1,
                fraction: 1.0
            }]
        );
    }

    #[test]
    fn close_up_counts_as_close() {
        let lex = Lexicon::default_english();
        let rows = top_terms(
            &set(&["A close-up of a pizza", "a slice of pizza"]),
            &RoiMask::whole_brain(2),
            &lex,
            Pos::Noun,
            10,
        )
        .unwrap();
        let got: Vec<(&str, usize)> = rows.iter().map(|r| (r.lemma.as_str(), r.count)).collect();
        assert_eq!(got, vec![("pizza", 2), ("close", 1), ("slice", 1)]);
    }

    #[test]
    fn adjectives_and_ordering() {
        let lex = Lexicon::default_english();
        let rows = top_terms(
            &set(&["a red car", "a red bus", "a big blue bus"]),
            &RoiMask::whole_brain(4),
            &lex,
            Pos::Adjective,
            2,
        )
        .unwrap();
        assert_eq!(rows[0].lemma, "red");
        assert_eq!(rows[0].count, 2);
        assert!((rows[0].fraction - 0.5).abs() < 1e-12);
        assert_eq!(rows[1].lemma, "big");
    }

    #[test]
    fn person_fraction_examples() {
        let lex = Lexicon::default_english();
        let roi = RoiMask::whole_brain(3);
        let all = set(&["a man riding a horse"; 3]);
        assert_eq!(person_fraction(&all, &roi, &lex).unwrap(), 1.0);
        let none = set(&["a bowl of fruit"; 3]);
        assert_eq!(person_fraction(&none, &roi, &lex).unwrap(), 0.0);
        let empty = RoiMask::explicit("e", vec![], 3).unwrap();
        assert!(matches!(
            person_fraction(&all, &empty, &lex),
            Err(AnalysisError::EmptyRoi(_))
        ));
    }

    #[test]
    fn single_versus_multiple() {
        let lex = Lexicon::default_english();
        assert_eq!(person_mention("a man riding a horse", &lex), PersonMention::Single);
        assert_eq!(person_mention("two men riding horses", &lex), PersonMention::Multiple);
        assert_eq!(person_mention("a man and a woman", &lex), PersonMention::Multiple);
        assert_eq!(person_mention("a group of people", &lex), PersonMention::Multiple);
        assert_eq!(person_mention("a red bus", &lex), PersonMention::None);
    }
}
