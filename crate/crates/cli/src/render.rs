//! Deterministic text and SVG renderers. Output depends only on the input;
//! no timestamps or generated ids.

use std::fmt::Write as _;

use phylotrace::embeddings::PcaProjection;
use phylotrace::importance::LayerRow;
use phylotrace::phylo::{NodeId, PhyloTree};

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Children ordered by their smallest descendant leaf label, matching the
/// canonical Newick order.
fn ordered_children(tree: &PhyloTree) -> Vec<Vec<NodeId>> {
    let mut min_label: Vec<Option<String>> = vec![None; tree.len()];
    for id in tree.postorder() {
        let node = tree.node(id);
        let own = if node.children.is_empty() { node.label.clone() } else { None };
        min_label[id] = node
            .children
            .iter()
            .filter_map(|&c| min_label[c].clone())
            .chain(own)
            .min();
    }
    (0..tree.len())
        .map(|id| {
            let mut cs = tree.node(id).children.clone();
            cs.sort_by(|&a, &b| min_label[a].cmp(&min_label[b]).then(a.cmp(&b)));
            cs
        })
        .collect()
}

fn node_text(tree: &PhyloTree, id: NodeId) -> String {
    let node = tree.node(id);
    let mut s = node.label.clone().unwrap_or_default();
    if let Some(l) = node.length {
        write!(s, ":{l:?}").unwrap();
    }
    s
}

/// Indented ASCII drawing, one node per line.
pub fn ascii_tree(tree: &PhyloTree) -> String {
    fn walk(tree: &PhyloTree, kids: &[Vec<NodeId>], id: NodeId, prefix: &str, last: bool, out: &mut String) {
        let text = node_text(tree, id);
        let text = if text.is_empty() { "*".to_string() } else { text };
        writeln!(out, "{prefix}{}{text}", if last { "`-- " } else { "+-- " }).unwrap();
        let next = format!("{prefix}{}", if last { "    " } else { "|   " });
        let cs = &kids[id];
        for (i, &c) in cs.iter().enumerate() {
            walk(tree, kids, c, &next, i + 1 == cs.len(), out);
        }
    }
    let kids = ordered_children(tree);
    let mut out = String::new();
    let root = tree.root();
    let text = node_text(tree, root);
    writeln!(out, "{}", if text.is_empty() { "*" } else { &text }).unwrap();
    let cs = &kids[root];
    for (i, &c) in cs.iter().enumerate() {
        walk(tree, &kids, c, "", i + 1 == cs.len(), &mut out);
    }
    out
}

/// Undirected DOT graph; nodes are numbered in preorder.
pub fn dot_tree(tree: &PhyloTree) -> String {
    let kids = ordered_children(tree);
    let mut order = Vec::with_capacity(tree.len());
    let mut stack = vec![tree.root()];
    while let Some(id) = stack.pop() {
        order.push(id);
        stack.extend(kids[id].iter().rev());
    }
    let mut number = vec![0usize; tree.len()];
    for (i, &id) in order.iter().enumerate() {
        number[id] = i;
    }
    let quote = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
    let mut out = String::from("graph tree {\n  node [shape=plaintext];\n");
    for &id in &order {
        let node = tree.node(id);
        let label = node.label.as_deref().unwrap_or("");
        if node.children.is_empty() {
            writeln!(out, "  n{} [label=\"{}\"];", number[id], quote(label)).unwrap();
        } else {
            writeln!(out, "  n{} [label=\"{}\", shape=point];", number[id], quote(label)).unwrap();
        }
    }
    for &id in &order {
        for &c in &kids[id] {
            match tree.node(c).length {
                Some(l) => writeln!(out, "  n{} -- n{} [label=\"{l:?}\"];", number[id], number[c]).unwrap(),
                None => writeln!(out, "  n{} -- n{};", number[id], number[c]).unwrap(),
            }
        }
    }
    out.push_str("}\n");
    out
}

const ROW: f64 = 20.0;
const MARGIN: f64 = 20.0;
const PLOT_WIDTH: f64 = 480.0;

/// Rectangular cladogram. Branch lengths are drawn to scale when every edge
/// has one, unit length otherwise; leaf labels sit in a column on the right.
pub fn svg_tree(tree: &PhyloTree) -> String {
    let kids = ordered_children(tree);
    let scaled = tree.has_lengths();
    let mut depth = vec![0.0f64; tree.len()];
    let mut stack = vec![tree.root()];
    let mut leaves_in_order = Vec::new();
    while let Some(id) = stack.pop() {
        for &c in &kids[id] {
            let len = if scaled { tree.node(c).length.unwrap_or(0.0) } else { 1.0 };
            depth[c] = depth[id] + len;
        }
        if kids[id].is_empty() {
            leaves_in_order.push(id);
        }
        stack.extend(kids[id].iter().rev());
    }
    let mut y = vec![0.0f64; tree.len()];
    for (i, &leaf) in leaves_in_order.iter().enumerate() {
        y[leaf] = MARGIN + ROW * (i as f64 + 0.5);
    }
    for id in tree.postorder() {
        if let (Some(&first), Some(&last)) = (kids[id].first(), kids[id].last()) {
            y[id] = 0.5 * (y[first] + y[last]);
        }
    }
    let max_depth = depth.iter().copied().fold(0.0, f64::max);
    let sx = if max_depth > 0.0 { PLOT_WIDTH / max_depth } else { 0.0 };
    let x = |id: NodeId| MARGIN + depth[id] * sx;
    let label_x = MARGIN + PLOT_WIDTH + 10.0;
    let longest = leaves_in_order
        .iter()
        .map(|&l| tree.node(l).label.as_deref().unwrap_or("").chars().count())
        .max()
        .unwrap_or(0);
    let width = label_x + 8.0 * longest as f64 + MARGIN;
    let height = 2.0 * MARGIN + ROW * leaves_in_order.len() as f64;

    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    )
    .unwrap();
    out.push_str("<g stroke=\"black\" stroke-width=\"1.5\" fill=\"none\">\n");
    for id in tree.preorder() {
        let cs = &kids[id];
        if let (Some(&first), Some(&last)) = (cs.first(), cs.last()) {
            writeln!(out, "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>", x(id), y[first], x(id), y[last]).unwrap();
        }
        for &c in cs {
            writeln!(out, "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>", x(id), y[c], x(c), y[c]).unwrap();
        }
    }
    out.push_str("</g>\n<g stroke=\"#999999\" stroke-dasharray=\"2,3\">\n");
    for &leaf in &leaves_in_order {
        if x(leaf) < label_x - 4.0 {
            writeln!(out, "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>", x(leaf), y[leaf], label_x - 4.0, y[leaf]).unwrap();
        }
    }
    out.push_str("</g>\n<g font-family=\"monospace\" font-size=\"12\" dominant-baseline=\"middle\">\n");
    for &leaf in &leaves_in_order {
        let label = xml_escape(tree.node(leaf).label.as_deref().unwrap_or(""));
        writeln!(out, "<text x=\"{label_x:.2}\" y=\"{:.2}\">{label}</text>", y[leaf]).unwrap();
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Horizontal bars of mean layer distance, longest first.
pub fn svg_bars(rows: &[LayerRow], title: &str) -> String {
    let label_w = 8.0 * rows.iter().map(|r| r.layer.chars().count()).max().unwrap_or(0) as f64 + 10.0;
    let bar_w = 360.0;
    let width = MARGIN * 2.0 + label_w + bar_w + 140.0;
    let height = MARGIN * 2.0 + 24.0 + ROW * rows.len() as f64;
    let max = rows.iter().map(|r| r.mean).fold(0.0, f64::max);
    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"{MARGIN:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        MARGIN + 4.0,
        xml_escape(title)
    )
    .unwrap();
    out.push_str("<g font-family=\"monospace\" font-size=\"12\" dominant-baseline=\"middle\">\n");
    for (i, r) in rows.iter().enumerate() {
        let top = MARGIN + 24.0 + ROW * i as f64;
        let w = if max > 0.0 { bar_w * r.mean / max } else { 0.0 };
        let fill = if r.shared { "#bbbbbb" } else { "#4a78b5" };
        writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            MARGIN + label_w - 6.0,
            top + ROW / 2.0,
            xml_escape(&r.layer)
        )
        .unwrap();
        writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{w:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
            MARGIN + label_w,
            top + 3.0,
            ROW - 6.0
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\">{:.4e}</text>",
            MARGIN + label_w + w + 6.0,
            top + ROW / 2.0,
            r.mean
        )
        .unwrap();
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Labeled scatter of the first two principal coordinates.
pub fn svg_scatter(p: &PcaProjection) -> String {
    let size = 480.0;
    let pad = 50.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in &p.coordinates {
        for k in 0..2 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let span = |k: usize| if hi[k] > lo[k] { hi[k] - lo[k] } else { 1.0 };
    let px = |v: f64| pad + (v - lo[0]) / span(0) * size;
    let py = |v: f64| pad + size - (v - lo[1]) / span(1) * size;
    let total = size + 2.0 * pad + 120.0;
    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total:.0}\" height=\"{:.0}\" viewBox=\"0 0 {total:.0} {:.0}\">",
        size + 2.0 * pad,
        size + 2.0 * pad
    )
    .unwrap();
    writeln!(
        out,
        "<rect x=\"{pad:.2}\" y=\"{pad:.2}\" width=\"{size:.2}\" height=\"{size:.2}\" fill=\"none\" stroke=\"#999999\"/>"
    )
    .unwrap();
    writeln!(
        out,
        "<g font-family=\"sans-serif\" font-size=\"12\">\n<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">PC1 ({:.1}%)</text>",
        pad + size / 2.0,
        size + 2.0 * pad - 12.0,
        100.0 * p.explained[0]
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"14\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">PC2 ({:.1}%)</text>\n</g>",
        pad + size / 2.0,
        pad + size / 2.0,
        100.0 * p.explained[1]
    )
    .unwrap();
    out.push_str("<g font-family=\"monospace\" font-size=\"10\">\n");
    for (label, c) in p.labels.iter().zip(&p.coordinates) {
        let (x, y) = (px(c[0]), py(c[1]));
        writeln!(out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"#4a78b5\"/>").unwrap();
        writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", x + 5.0, y - 4.0, xml_escape(label)).unwrap();
    }
    out.push_str("</g>\n</svg>\n");
    out
}
