//! Stratified CLS sampling for projections, and the projection CSV/SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::corpus::{Batch, Factor, Review};
use crate::encoder::{cls_representation, EncoderModel, Mode};
use crate::error::{Error, Result};
use crate::nn::{Binder, Graph};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionInputs {
    /// CLS vectors, one per sampled review.
    pub points: Vec<Vec<f64>>,
    pub review_ids: Vec<u64>,
    pub languages: Vec<usize>,
    pub groups: Vec<usize>,
}

/// Picks `n` reviews spread evenly over the language × group cells present
/// in `dev` (earlier cells take the remainder).
pub fn stratified_sample(dev: &[Review], n: usize, seed: u64) -> Result<Vec<Review>> {
    let mut cells: BTreeMap<(usize, usize), Vec<&Review>> = BTreeMap::new();
    for r in dev {
        cells.entry((r.language, r.group)).or_default().push(r);
    }
    if cells.is_empty() || n == 0 {
        return Err(Error::Data("nothing to sample for projection".into()));
    }
    let (base, extra) = (n / cells.len(), n % cells.len());
    let mut rng = seed::rng(seed, "projection_sample");
    let mut out = Vec::with_capacity(n);
    for (i, ((language, group), mut rs)) in cells.into_iter().enumerate() {
        let want = base + usize::from(i < extra);
        if rs.len() < want {
            return Err(Error::Data(format!(
                "projection needs {want} reviews for language {language} group {group}, dev has {}",
                rs.len()
            )));
        }
        rs.shuffle(&mut rng);
        out.extend(rs.into_iter().take(want).cloned());
    }
    Ok(out)
}

/// Eval-mode CLS representations of a stratified dev sample.
pub fn sample_projection_inputs(model: &EncoderModel, dev: &[Review], n: usize, seed: u64) -> Result<ProjectionInputs> {
    let sample = stratified_sample(dev, n, seed)?;
    let d = model.config.d_model;
    let mut points = Vec::with_capacity(sample.len());
    for chunk in sample.chunks(64) {
        let batch = Batch::from_reviews(chunk, model.config.max_len)?;
        let mut g = Graph::new();
        let mut b = Binder::new();
        let out = model.encode(&mut g, &mut b, &batch, Mode::Eval)?;
        let cls = cls_representation(&mut g, out.hidden)?;
        points.extend(g.value(cls).chunks(d).map(<[f64]>::to_vec));
    }
    Ok(ProjectionInputs {
        points,
        review_ids: sample.iter().map(|r| r.id).collect(),
        languages: sample.iter().map(|r| r.language).collect(),
        groups: sample.iter().map(|r| r.group).collect(),
    })
}

pub fn projection_csv(coords: &[[f64; 2]], inputs: &ProjectionInputs, factor: Factor) -> String {
    let mut out = String::from("x,y,language,group,factor\n");
    for (i, c) in coords.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c[0],
            c[1],
            inputs.languages[i],
            factor.group_labels()[inputs.groups[i]],
            factor
        );
    }
    out
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Two scatter panels side by side, coloured by language and by group.
pub fn projection_svg(coords: &[[f64; 2]], inputs: &ProjectionInputs, factor: Factor) -> String {
    let (panel, margin) = (420.0, 30.0);
    let (min_x, max_x, min_y, max_y) = coords.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p[0]), b.max(p[0]), c.min(p[1]), d.max(p[1])),
    );
    let sx = (max_x - min_x).max(1e-12);
    let sy = (max_y - min_y).max(1e-12);
    let width = 2.0 * panel + 3.0 * margin;
    let height = panel + 2.0 * margin + 20.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let group_names = factor.group_labels();
    let panels: [(&str, Vec<usize>); 2] = [("language", inputs.languages.clone()), (factor.as_str(), inputs.groups.clone())];
    for (k, (title, labels)) in panels.iter().enumerate() {
        let ox = margin + k as f64 * (panel + margin);
        let oy = margin + 20.0;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\">colour: {title}</text>",
            ox,
            margin
        );
        let _ = writeln!(
            svg,
            "<rect x=\"{ox}\" y=\"{oy}\" width=\"{panel}\" height=\"{panel}\" fill=\"none\" stroke=\"#999\"/>"
        );
        for (p, &l) in coords.iter().zip(labels) {
            let x = ox + (p[0] - min_x) / sx * panel;
            let y = oy + panel - (p[1] - min_y) / sy * panel;
            let _ = writeln!(
                svg,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.7\"/>",
                PALETTE[l % PALETTE.len()]
            );
        }
        let mut present: Vec<usize> = labels.clone();
        present.sort_unstable();
        present.dedup();
        for (row, l) in present.iter().enumerate() {
            let name = if k == 0 { format!("L{l}") } else { group_names[*l].to_string() };
            let ly = oy + 14.0 * row as f64 + 10.0;
            let _ = writeln!(
                svg,
                "<circle cx=\"{}\" cy=\"{ly}\" r=\"4\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
                ox + panel - 50.0,
                PALETTE[l % PALETTE.len()],
                ox + panel - 42.0,
                ly + 4.0,
                name.replace('<', "&lt;").replace('>', "&gt;")
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, GeneratorConfig};
    use crate::encoder::EncoderConfig;

    #[test]
    fn stratified_counts_and_determinism() {
        let cfg = GeneratorConfig {
            n_domains: 1,
            filler_per_domain: 10,
            min_len: 3,
            max_len: 6,
            ..Default::default()
        };
        let reviews = generate(&cfg, 30).unwrap();
        let s = stratified_sample(&reviews, 100, 4).unwrap();
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for r in &s {
            *counts.entry((r.language, r.group)).or_default() += 1;
        }
        assert_eq!(counts.len(), 10);
        assert!(counts.values().all(|&c| c == 10));
        assert_eq!(s, stratified_sample(&reviews, 100, 4).unwrap());
        assert!(matches!(stratified_sample(&reviews, 1000, 4), Err(Error::Data(_))));

        let model = EncoderModel::new(EncoderConfig {
            vocab_size: cfg.layout().vocab_size(),
            max_len: 8,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            ..Default::default()
        })
        .unwrap();
        let inputs = sample_projection_inputs(&model, &reviews, 20, 1).unwrap();
        assert_eq!(inputs.points.len(), 20);
        assert!(inputs.points.iter().all(|p| p.len() == 8));
        let coords: Vec<[f64; 2]> = (0..20).map(|i| [i as f64, 0.0]).collect();
        let csv = projection_csv(&coords, &inputs, Factor::Gender);
        assert!(csv.starts_with("x,y,language,group,factor\n"));
        assert_eq!(csv.lines().count(), 21);
        let svg = projection_svg(&coords, &inputs, Factor::Gender);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
