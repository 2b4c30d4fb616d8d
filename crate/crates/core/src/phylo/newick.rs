use thiserror::Error;

use super::{NodeId, PhyloTree};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("newick parse error at byte {offset}: {message}")]
pub struct NewickError {
    pub offset: usize,
    pub message: String,
}

const RESERVED: &[u8] = b"()[]':;,";

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, NewickError> {
        Err(NewickError {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) -> Result<(), NewickError> {
        loop {
            match self.src.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    let start = self.pos;
                    match self.src[start..].iter().position(|&b| b == b']') {
                        Some(end) => self.pos = start + end + 1,
                        None => return self.err("unterminated comment"),
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>, NewickError> {
        self.skip_ws()?;
        Ok(self.src.get(self.pos).copied())
    }

    fn label(&mut self) -> Result<Option<String>, NewickError> {
        match self.peek()? {
            Some(b'\'') => {
                self.pos += 1;
                let mut out = Vec::new();
                loop {
                    match self.src.get(self.pos) {
                        None => return self.err("unterminated quoted label"),
                        Some(b'\'') if self.src.get(self.pos + 1) == Some(&b'\'') => {
                            out.push(b'\'');
                            self.pos += 2;
                        }
                        Some(b'\'') => {
                            self.pos += 1;
                            break;
                        }
                        Some(&b) => {
                            out.push(b);
                            self.pos += 1;
                        }
                    }
                }
                String::from_utf8(out)
                    .map(Some)
                    .or_else(|_| self.err("label is not valid UTF-8"))
            }
            _ => {
                let start = self.pos;
                while let Some(&b) = self.src.get(self.pos) {
                    if RESERVED.contains(&b) || b.is_ascii_whitespace() {
                        break;
                    }
                    self.pos += 1;
                }
                if start == self.pos {
                    return Ok(None);
                }
                std::str::from_utf8(&self.src[start..self.pos])
                    .map(|s| Some(s.to_string()))
                    .or_else(|_| self.err("label is not valid UTF-8"))
            }
        }
    }

    fn length(&mut self) -> Result<Option<f64>, NewickError> {
        if self.peek()? != Some(b':') {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_ws()?;
        let start = self.pos;
        while let Some(&b) = self.src.get(self.pos) {
            if b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(Some(v)),
            Ok(_) => {
                self.pos = start;
                self.err(format!("branch length `{text}` must be finite and nonnegative"))
            }
            Err(_) => {
                self.pos = start;
                self.err("expected a branch length")
            }
        }
    }

    /// Parses one subtree; `id` is the already-allocated node for it.
    fn subtree(&mut self, tree: &mut PhyloTree, id: NodeId, depth: usize) -> Result<(), NewickError> {
        if depth > 10_000 {
            return self.err("tree nesting too deep");
        }
        if self.peek()? == Some(b'(') {
            self.pos += 1;
            loop {
                let child = tree.add_child(id, None, None);
                self.subtree(tree, child, depth + 1)?;
                match self.peek()? {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    Some(_) => return self.err("expected `,` or `)`"),
                    None => return self.err("unbalanced parentheses"),
                }
            }
        }
        let label = self.label()?;
        let length = self.length()?;
        let node = &mut tree.nodes[id];
        node.label = label;
        node.length = length;
        if node.is_leaf() && node.label.is_none() {
            return self.err("leaf without a label");
        }
        Ok(())
    }
}

pub fn parse_newick(s: &str) -> Result<PhyloTree, NewickError> {
    let mut p = Parser {
        src: s.as_bytes(),
        pos: 0,
    };
    let mut tree = PhyloTree::new();
    if p.peek()?.is_none() {
        return p.err("empty input");
    }
    p.subtree(&mut tree, 0, 0)?;
    match p.peek()? {
        Some(b';') => p.pos += 1,
        Some(b')') => return p.err("unbalanced parentheses"),
        Some(_) => return p.err("expected `;`"),
        None => return p.err("missing terminating `;`"),
    }
    if p.peek()?.is_some() {
        return p.err("trailing characters after `;`");
    }
    tree.validate().map_err(|e| NewickError {
        offset: s.len(),
        message: e.to_string(),
    })?;
    Ok(tree)
}

fn needs_quotes(label: &str) -> bool {
    label.is_empty()
        || label
            .bytes()
            .any(|b| RESERVED.contains(&b) || b.is_ascii_whitespace())
}

fn write_label(out: &mut String, label: &str) {
    if needs_quotes(label) {
        out.push('\'');
        out.push_str(&label.replace('\'', "''"));
        out.push('\'');
    } else {
        out.push_str(label);
    }
}

/// Canonical Newick: children ordered by their smallest descendant leaf label.
pub(super) fn to_newick(tree: &PhyloTree) -> String {
    let mins = tree.min_labels();
    let mut out = String::new();
    write_node(tree, tree.root(), &mins, &mut out);
    out.push(';');
    out
}

fn write_node(tree: &PhyloTree, id: NodeId, mins: &[Option<String>], out: &mut String) {
    let node = tree.node(id);
    if !node.is_leaf() {
        let mut children = node.children.clone();
        children.sort_by(|&a, &b| mins[a].cmp(&mins[b]));
        out.push('(');
        for (k, &c) in children.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write_node(tree, c, mins, out);
        }
        out.push(')');
    }
    if let Some(label) = &node.label {
        write_label(out, label);
    }
    if let Some(len) = node.length {
        out.push_str(&format!(":{len:?}"));
    }
}
