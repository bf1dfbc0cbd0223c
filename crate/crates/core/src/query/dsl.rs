//! Prefix text syntax for queries.
//!
//! ```text
//! expr := (p REL expr) | (i expr expr+) | (u expr expr+) | (n expr)
//!       | (s ITEM+) | (e ITEM) | (a ATTRIBUTE)
//! REL  := NAME | ~NAME          ; `~` inverts the relation
//! NAME := bare-token | "quoted \" string"
//! ```

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{QueryError, QueryGraph, QueryNode, QueryType, Relation, Result};
use crate::graph::{VertexKind, Vocab};

/// Name-based form of a query, used for the text syntax and JSON files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum QueryExpr {
    Session {
        items: Vec<String>,
    },
    Item {
        name: String,
    },
    Attribute {
        name: String,
    },
    Project {
        relation: String,
        #[serde(default)]
        inverse: bool,
        child: Box<QueryExpr>,
    },
    And {
        children: Vec<QueryExpr>,
    },
    Or {
        children: Vec<QueryExpr>,
    },
    Not {
        child: Box<QueryExpr>,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Atom { text: String, quoted: bool, tilde: bool },
}

#[derive(Debug, Clone)]
struct Lexeme {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> QueryError {
    QueryError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Lexeme>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1, 1);
    let bump = |c: char, line: &mut usize, col: &mut usize| {
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while let Some(&c) = chars.peek() {
        let (l0, c0) = (line, col);
        if c.is_whitespace() {
            chars.next();
            bump(c, &mut line, &mut col);
            continue;
        }
        if c == '(' || c == ')' {
            chars.next();
            bump(c, &mut line, &mut col);
            out.push(Lexeme {
                tok: if c == '(' { Tok::Open } else { Tok::Close },
                line: l0,
                column: c0,
            });
            continue;
        }
        let mut tilde = false;
        if c == '~' {
            let mut look = chars.clone();
            look.next();
            if look.peek() == Some(&'"') {
                tilde = true;
                chars.next();
                bump('~', &mut line, &mut col);
            }
        }
        if chars.peek() == Some(&'"') {
            chars.next();
            bump('"', &mut line, &mut col);
            let mut s = String::new();
            loop {
                match chars.next() {
                    None => return Err(syntax(l0, c0, "unterminated string")),
                    Some('"') => {
                        bump('"', &mut line, &mut col);
                        break;
                    }
                    Some('\\') => {
                        bump('\\', &mut line, &mut col);
                        match chars.next() {
                            Some(e @ ('"' | '\\')) => {
                                bump(e, &mut line, &mut col);
                                s.push(e);
                            }
                            _ => return Err(syntax(line, col, "bad escape in string")),
                        }
                    }
                    Some(ch) => {
                        bump(ch, &mut line, &mut col);
                        s.push(ch);
                    }
                }
            }
            out.push(Lexeme {
                tok: Tok::Atom {
                    text: s,
                    quoted: true,
                    tilde,
                },
                line: l0,
                column: c0,
            });
            continue;
        }
        let mut s = String::new();
        while let Some(&ch) = chars.peek() {
            if ch.is_whitespace() || ch == '(' || ch == ')' {
                break;
            }
            if ch == '"' {
                return Err(syntax(line, col, "quote inside a bare name"));
            }
            chars.next();
            bump(ch, &mut line, &mut col);
            s.push(ch);
        }
        out.push(Lexeme {
            tok: Tok::Atom {
                text: s,
                quoted: false,
                tilde: false,
            },
            line: l0,
            column: c0,
        });
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Lexeme>,
    at: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Lexeme> {
        self.toks.get(self.at)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map_or(self.end, |l| (l.line, l.column))
    }

    fn err(&self, message: impl Into<String>) -> QueryError {
        let (l, c) = self.here();
        syntax(l, c, message)
    }

    fn next(&mut self) -> Option<Lexeme> {
        let l = self.toks.get(self.at).cloned();
        self.at += 1;
        l
    }

    fn expect_close(&mut self) -> Result<()> {
        match self.peek().map(|l| &l.tok) {
            Some(Tok::Close) => {
                self.at += 1;
                Ok(())
            }
            Some(_) => Err(self.err("expected ')'")),
            None => Err(self.err("unexpected end of input, expected ')'")),
        }
    }

    fn name(&mut self) -> Result<String> {
        match self.peek().map(|l| l.tok.clone()) {
            Some(Tok::Atom { text, tilde: false, .. }) => {
                self.at += 1;
                Ok(text)
            }
            Some(Tok::Atom { tilde: true, .. }) => Err(self.err("'~' is only allowed on relations")),
            Some(_) => Err(self.err("expected a name")),
            None => Err(self.err("unexpected end of input, expected a name")),
        }
    }

    fn relation(&mut self) -> Result<(String, bool)> {
        match self.peek().map(|l| l.tok.clone()) {
            Some(Tok::Atom { text, quoted, tilde }) => {
                self.at += 1;
                if quoted {
                    return Ok((text, tilde));
                }
                match text.strip_prefix('~') {
                    Some("") => Err(self.err("'~' needs a relation name")),
                    Some(rest) => Ok((rest.to_string(), true)),
                    None => Ok((text, false)),
                }
            }
            _ => Err(self.err("expected a relation name")),
        }
    }

    fn expr(&mut self) -> Result<QueryExpr> {
        let (l, c) = self.here();
        match self.next().map(|x| x.tok) {
            Some(Tok::Open) => {}
            Some(_) => return Err(syntax(l, c, "expected '('")),
            None => return Err(syntax(l, c, "unexpected end of input")),
        }
        let (ol, oc) = self.here();
        let op = match self.next().map(|x| x.tok) {
            Some(Tok::Atom {
                text,
                quoted: false,
                tilde: false,
            }) => text,
            _ => return Err(syntax(ol, oc, "expected an operator")),
        };
        let e = match op.as_str() {
            "p" => {
                let (relation, inverse) = self.relation()?;
                let child = Box::new(self.expr()?);
                QueryExpr::Project {
                    relation,
                    inverse,
                    child,
                }
            }
            "i" | "u" => {
                let mut children = Vec::new();
                while matches!(self.peek().map(|l| &l.tok), Some(Tok::Open)) {
                    children.push(self.expr()?);
                }
                if op == "i" {
                    QueryExpr::And { children }
                } else {
                    QueryExpr::Or { children }
                }
            }
            "n" => QueryExpr::Not {
                child: Box::new(self.expr()?),
            },
            "s" => {
                let mut items = Vec::new();
                while matches!(self.peek().map(|l| &l.tok), Some(Tok::Atom { .. })) {
                    items.push(self.name()?);
                }
                QueryExpr::Session { items }
            }
            "e" => QueryExpr::Item { name: self.name()? },
            "a" => QueryExpr::Attribute { name: self.name()? },
            other => return Err(syntax(ol, oc, format!("unknown operator {other:?}"))),
        };
        self.expect_close()?;
        Ok(e)
    }
}

/// Parses query text into its name-based form without resolving names.
pub fn parse_expr(text: &str) -> Result<QueryExpr> {
    let toks = lex(text)?;
    let last_line = text.lines().count().max(1);
    let last_col = text.lines().last().map_or(0, |l| l.chars().count()) + 1;
    let mut p = Parser {
        toks,
        at: 0,
        end: (last_line, last_col),
    };
    let e = p.expr()?;
    if p.peek().is_some() {
        return Err(p.err("trailing input after the query"));
    }
    Ok(e)
}

/// Parses query text and resolves names against `vocab`.
pub fn parse(text: &str, vocab: &Vocab) -> Result<QueryGraph> {
    parse_expr(text)?.resolve(vocab)
}

/// Renders `q` in the text syntax, naming vertices through `vocab`.
pub fn render(q: &QueryGraph, vocab: &Vocab) -> String {
    QueryExpr::from_graph(q, vocab).to_string()
}

impl QueryExpr {
    /// Builds the query graph, with nodes in post-order (children left to
    /// right), then validates it.
    pub fn resolve(&self, vocab: &Vocab) -> Result<QueryGraph> {
        let mut nodes = Vec::new();
        let mut path = Vec::new();
        self.emit(vocab, &mut nodes, &mut path)?;
        QueryGraph::build(nodes).map_err(|d| QueryError::Semantic {
            path: d.path,
            message: d.message,
        })
    }

    fn emit(&self, vocab: &Vocab, nodes: &mut Vec<QueryNode>, path: &mut Vec<usize>) -> Result<usize> {
        let sem = |path: &[usize], message: String| QueryError::Semantic {
            path: path.to_vec(),
            message,
        };
        let lookup = |kind: VertexKind, name: &str| {
            vocab
                .lookup(kind, name)
                .ok_or_else(|| sem(path, format!("unknown {kind} {name:?}")))
        };
        let node = match self {
            QueryExpr::Session { items } => QueryNode::SessionAnchor(
                items
                    .iter()
                    .map(|n| lookup(VertexKind::Item, n))
                    .collect::<Result<_>>()?,
            ),
            QueryExpr::Item { name } => QueryNode::ItemAnchor(lookup(VertexKind::Item, name)?),
            QueryExpr::Attribute { name } => {
                QueryNode::AttributeAnchor(lookup(VertexKind::Attribute, name)?)
            }
            QueryExpr::Project {
                relation,
                inverse,
                child,
            } => {
                let id = vocab
                    .relation(relation)
                    .ok_or_else(|| sem(path, format!("unknown relation {relation:?}")))?;
                path.push(0);
                let c = child.emit(vocab, nodes, path)?;
                path.pop();
                QueryNode::Projection {
                    rel: Relation {
                        id,
                        inverse: *inverse,
                    },
                    child: c,
                }
            }
            QueryExpr::And { children } | QueryExpr::Or { children } => {
                let mut ids = Vec::with_capacity(children.len());
                for (k, c) in children.iter().enumerate() {
                    path.push(k);
                    ids.push(c.emit(vocab, nodes, path)?);
                    path.pop();
                }
                if matches!(self, QueryExpr::And { .. }) {
                    QueryNode::Intersection(ids)
                } else {
                    QueryNode::Union(ids)
                }
            }
            QueryExpr::Not { child } => {
                path.push(0);
                let c = child.emit(vocab, nodes, path)?;
                path.pop();
                QueryNode::Negation(c)
            }
        };
        nodes.push(node);
        Ok(nodes.len() - 1)
    }

    pub fn from_graph(q: &QueryGraph, vocab: &Vocab) -> QueryExpr {
        fn go(q: &QueryGraph, at: usize, v: &Vocab) -> QueryExpr {
            match &q.nodes()[at] {
                QueryNode::SessionAnchor(ms) => QueryExpr::Session {
                    items: ms.iter().map(|m| v.name(*m).to_string()).collect(),
                },
                QueryNode::ItemAnchor(x) => QueryExpr::Item {
                    name: v.name(*x).to_string(),
                },
                QueryNode::AttributeAnchor(x) => QueryExpr::Attribute {
                    name: v.name(*x).to_string(),
                },
                QueryNode::Projection { rel, child } => QueryExpr::Project {
                    relation: v.relation_name(rel.id).to_string(),
                    inverse: rel.inverse,
                    child: Box::new(go(q, *child, v)),
                },
                QueryNode::Intersection(cs) => QueryExpr::And {
                    children: cs.iter().map(|c| go(q, *c, v)).collect(),
                },
                QueryNode::Union(cs) => QueryExpr::Or {
                    children: cs.iter().map(|c| go(q, *c, v)).collect(),
                },
                QueryNode::Negation(c) => QueryExpr::Not {
                    child: Box::new(go(q, *c, v)),
                },
            }
        }
        go(q, q.sink(), vocab)
    }
}

fn needs_quotes(name: &str) -> bool {
    name.is_empty()
        || name.starts_with('~')
        || name
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | '"' | '\\'))
}

struct Name<'a>(&'a str);

impl fmt::Display for Name<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if needs_quotes(self.0) {
            f.write_str("\"")?;
            for c in self.0.chars() {
                if matches!(c, '"' | '\\') {
                    f.write_str("\\")?;
                }
                write!(f, "{c}")?;
            }
            f.write_str("\"")
        } else {
            f.write_str(self.0)
        }
    }
}

impl fmt::Display for QueryExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryExpr::Session { items } => {
                f.write_str("(s")?;
                for i in items {
                    write!(f, " {}", Name(i))?;
                }
                f.write_str(")")
            }
            QueryExpr::Item { name } => write!(f, "(e {})", Name(name)),
            QueryExpr::Attribute { name } => write!(f, "(a {})", Name(name)),
            QueryExpr::Project {
                relation,
                inverse,
                child,
            } => write!(
                f,
                "(p {}{} {child})",
                if *inverse { "~" } else { "" },
                Name(relation)
            ),
            QueryExpr::And { children } | QueryExpr::Or { children } => {
                f.write_str(if matches!(self, QueryExpr::And { .. }) {
                    "(i"
                } else {
                    "(u"
                })?;
                for c in children {
                    write!(f, " {c}")?;
                }
                f.write_str(")")
            }
            QueryExpr::Not { child } => write!(f, "(n {child})"),
        }
    }
}

const TYPE_HEADER: &str = "# type: ";

/// Writes a query file: a `# type: <tag>` header, then one query per line.
pub fn write_query_file(
    tag: QueryType,
    queries: &[QueryGraph],
    vocab: &Vocab,
    mut w: impl Write,
) -> std::io::Result<()> {
    writeln!(w, "{TYPE_HEADER}{tag}")?;
    for q in queries {
        writeln!(w, "{}", render(q, vocab))?;
    }
    Ok(())
}

/// Reads a file written by [`write_query_file`]. Blank lines are skipped;
/// syntax errors report file line numbers.
pub fn read_query_file(r: impl BufRead, vocab: &Vocab) -> Result<(QueryType, Vec<QueryGraph>)> {
    let mut lines = r.lines().enumerate();
    let io = |e: std::io::Error| syntax(0, 0, e.to_string());
    let tag = loop {
        match lines.next() {
            None => return Err(syntax(1, 1, "missing type header")),
            Some((_, l)) if l.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
            Some((i, l)) => {
                let l = l.map_err(io)?;
                let t = l
                    .strip_prefix(TYPE_HEADER)
                    .ok_or_else(|| syntax(i + 1, 1, format!("expected {TYPE_HEADER:?} header")))?;
                break t.trim().parse::<QueryType>()?;
            }
        }
    };
    let mut out = Vec::new();
    for (i, l) in lines {
        let l = l.map_err(io)?;
        if l.trim().is_empty() {
            continue;
        }
        let q = parse(&l, vocab).map_err(|e| match e {
            QueryError::Syntax { column, message, .. } => QueryError::Syntax {
                line: i + 1,
                column,
                message,
            },
            other => other,
        })?;
        out.push(q);
    }
    Ok((tag, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ingest, AttributeTriple, IngestConfig, SessionRecord};
    use crate::query::{template, Anchor};

    fn vocab() -> Vocab {
        let g = ingest(
            vec![
                SessionRecord::new("s1", &["a", "b"], &["c"]),
                SessionRecord::new("s2", &["b", "c"], &["d"]),
            ],
            vec![
                AttributeTriple::new("c", "brand", "X"),
                AttributeTriple::new("a", "brand", "my brand"),
            ],
            &IngestConfig::default(),
        )
        .unwrap();
        g.vocab().clone()
    }

    #[test]
    fn one_p_matches_template() {
        let v = vocab();
        let q = parse("(p desires (s a b))", &v).unwrap();
        let ids = vec![v.lookup(VertexKind::Item, "a").unwrap(), v.lookup(VertexKind::Item, "b").unwrap()];
        assert_eq!(q, template(QueryType::P1, &[Anchor::Session(ids)], None).unwrap());
    }

    #[test]
    fn root_negation_is_semantic() {
        let err = parse("(n (p desires (s a b)))", &vocab()).unwrap_err();
        assert_eq!(
            err,
            QueryError::Semantic {
                path: vec![],
                message: "negation at root".into()
            }
        );
    }

    #[test]
    fn unknown_names_report_paths() {
        let err = parse("(i (p desires (s a b)) (p ~color (a X)))", &vocab()).unwrap_err();
        assert_eq!(err.to_string(), "at /1: unknown relation \"color\"");
        let err = parse("(i (p desires (s a zz)) (p ~brand (a X)))", &vocab()).unwrap_err();
        assert_eq!(err.to_string(), "at /0/0: unknown item \"zz\"");
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_expr("(p desires\n  (s a b)").unwrap_err();
        assert!(matches!(err, QueryError::Syntax { line: 2, .. }), "{err}");
        let err = parse_expr("(q desires (s a))").unwrap_err();
        assert_eq!(
            err,
            QueryError::Syntax {
                line: 1,
                column: 2,
                message: "unknown operator \"q\"".into()
            }
        );
        assert!(parse_expr("(p desires (s a)) x").is_err());
        assert!(parse_expr("(s \"a)").is_err());
    }

    #[test]
    fn quoted_names_and_inverse_relations() {
        let v = vocab();
        let text = "(i (p desires (s a b)) (p ~brand (a \"my brand\")))";
        let q = parse(text, &v).unwrap();
        assert_eq!(render(&q, &v), text);
        let e = parse_expr("(p ~\"x y\" (e a))").unwrap();
        assert!(matches!(e, QueryExpr::Project { inverse: true, ref relation, .. } if relation == "x y"));
    }

    #[test]
    fn json_form_round_trips() {
        let e = parse_expr("(u (p desires (s a)) (p desires (s b c)))").unwrap();
        let json = serde_json::to_string(&e).unwrap();
        assert!(json.contains("\"op\":\"or\""));
        let back: QueryExpr = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn query_files_round_trip() {
        let v = vocab();
        let qs = vec![
            parse("(p desires (s a b))", &v).unwrap(),
            parse("(p desires (s b c))", &v).unwrap(),
        ];
        let mut buf = Vec::new();
        write_query_file(QueryType::P1, &qs, &v, &mut buf).unwrap();
        let (tag, back) = read_query_file(buf.as_slice(), &v).unwrap();
        assert_eq!(tag, QueryType::P1);
        assert_eq!(back, qs);
        let bad = "# type: 1p\n(p desires (s a b))\n(p desires (s a b)\n";
        let err = read_query_file(bad.as_bytes(), &v).unwrap_err();
        assert!(matches!(err, QueryError::Syntax { line: 3, .. }));
    }
}
