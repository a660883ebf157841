//! Zero-shot classification by cosine against category embeddings.

use serde::Serialize;

use super::AnalysisError;
use crate::linalg::{dot64, norm64};
use crate::tensor_io::EmbeddingMatrix;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub category_names: Vec<String>,
    /// Per image: index of the most similar category.
    pub labels: Vec<usize>,
    /// Per category: number of images labelled with it.
    pub counts: Vec<usize>,
    /// Per category: `100 · count / images`.
    pub percentages: Vec<f64>,
}

impl Classification {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,count,percent\n");
        for ((name, c), p) in self.category_names.iter().zip(&self.counts).zip(&self.percentages) {
            out.push_str(&format!("{name},{c},{p:.4}\n"));
        }
        out
    }

    /// Fraction of images whose label equals `expected[i]`.
    pub fn accuracy(&self, expected: &[usize]) -> f64 {
        let hits = self.labels.iter().zip(expected).filter(|(a, b)| a == b).count();
        hits as f64 / self.labels.len().max(1) as f64
    }
}

fn unit(row: &[f32]) -> Vec<f64> {
    let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
    let n = norm64(&v);
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

/// Labels each image with its highest-cosine category; ties go to the lowest
/// category index. A zero image row scores 0 against every category.
pub fn zero_shot_classify(
    images: &EmbeddingMatrix,
    categories: &EmbeddingMatrix,
    category_names: &[String],
) -> Result<Classification, AnalysisError> {
    let c = categories.rows();
    if c < 2 {
        return Err(AnalysisError::TooFewCategories(c));
    }
    if category_names.len() != c {
        return Err(AnalysisError::CategoryNames {
            names: category_names.len(),
            rows: c,
        });
    }
    if images.dim() != categories.dim() {
        return Err(AnalysisError::Dim {
            left: images.dim(),
            right: categories.dim(),
        });
    }
    let cats: Vec<Vec<f64>> = (0..c).map(|i| unit(categories.row(i))).collect();
    if let Some(row) = cats.iter().position(|v| norm64(v) == 0.0) {
        return Err(AnalysisError::ZeroRow { row });
    }
    let labels: Vec<usize> = (0..images.rows())
        .map(|s| {
            let x = unit(images.row(s));
            let mut best = (0, f64::NEG_INFINITY);
            for (i, cv) in cats.iter().enumerate() {
                let sim = dot64(&x, cv);
                if sim > best.1 {
                    best = (i, sim);
                }
            }
            best.0
        })
        .collect();
    let mut counts = vec![0usize; c];
    for &l in &labels {
        counts[l] += 1;
    }
    let n = labels.len().max(1) as f64;
    Ok(Classification {
        category_names: category_names.to_vec(),
        percentages: counts.iter().map(|&k| 100.0 * k as f64 / n).collect(),
        labels,
        counts,
    })
}
