//! Nearest-human-theme matching by embedding cosine.

use serde::{Deserialize, Serialize};

use crate::embed::{code_representation, cosine, Embedder};
use crate::error::MetricError;

/// A theme as label plus description. Human reference themes use this shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeText {
    pub label: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub generated: String,
    pub closest_human: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Sorted by descending similarity; ties keep generated order.
    pub rows: Vec<AlignmentRow>,
    pub mean_similarity: f64,
}

/// Matches every generated theme to the human theme of highest cosine
/// (first one on ties).
pub fn theme_alignment(embedder: &Embedder, generated: &[ThemeText], human: &[ThemeText]) -> Result<Alignment, MetricError> {
    if generated.is_empty() || human.is_empty() {
        return Err(MetricError::EmptyThemeList);
    }
    let embed = |t: &ThemeText| embedder.embed(&code_representation(&t.label, &t.description));
    let human_vecs = human.iter().map(embed).collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(generated.len());
    for g in generated {
        let gv = embed(g)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, hv) in human_vecs.iter().enumerate() {
            let s = cosine(&gv.vector, &hv.vector)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, similarity) = best.expect("human list is non-empty");
        rows.push(AlignmentRow { generated: g.label.clone(), closest_human: human[i].label.clone(), similarity });
    }
    let mean_similarity = rows.iter().map(|r| r.similarity).sum::<f64>() / rows.len() as f64;
    rows.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
    Ok(Alignment { rows, mean_similarity })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tt(label: &str, description: &str) -> ThemeText {
        ThemeText { label: label.into(), description: description.into() }
    }

    #[test]
    fn identical_text_matches_itself() {
        let e = Embedder::mock(384, 7);
        let human = vec![tt("Communication deficiencies disrupt continuity", "gaps between teams"), tt("Fear at diagnosis", "parents worry")];
        let a = theme_alignment(&e, &[human[1].clone()], &human).unwrap();
        assert_eq!(a.rows[0].closest_human, "Fear at diagnosis");
        assert!((a.rows[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_argmax() {
        let e = Embedder::mock(384, 7);
        let generated = vec![tt("Parenting and family dynamics", "roles at home"), tt("Communication challenges in healthcare", "talking with clinicians")];
        let human = vec![
            tt("Change in parent role as child transitions", "parents step back at home"),
            tt("Communication deficiencies disrupt continuity", "clinicians talking across teams"),
            tt("Living with uncertainty", "not knowing what comes next"),
        ];
        let a = theme_alignment(&e, &generated, &human).unwrap();
        let mut want = Vec::new();
        for g in &generated {
            let gv = e.embed(&code_representation(&g.label, &g.description)).unwrap();
            let sims: Vec<f64> = human
                .iter()
                .map(|h| cosine(&gv.vector, &e.embed(&code_representation(&h.label, &h.description)).unwrap().vector).unwrap())
                .collect();
            let (i, s) = sims.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, s)| if *s > acc.1 { (i, *s) } else { acc });
            want.push((g.label.clone(), human[i].label.clone(), s));
        }
        for (g, h, s) in want {
            let row = a.rows.iter().find(|r| r.generated == g).unwrap();
            assert_eq!(row.closest_human, h);
            assert!((row.similarity - s).abs() < 1e-12);
        }
        assert!(a.rows.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn empty_lists_are_rejected() {
        let e = Embedder::mock(16, 1);
        assert_eq!(theme_alignment(&e, &[], &[tt("x", "")]), Err(MetricError::EmptyThemeList));
        assert_eq!(theme_alignment(&e, &[tt("x", "")], &[]), Err(MetricError::EmptyThemeList));
    }
}
