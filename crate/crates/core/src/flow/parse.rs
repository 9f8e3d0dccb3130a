//! Parser for the `.flow` dataflow DSL.
//!
//! Grammar (line oriented, `#` starts a comment):
//!
//! ```text
//! node <name> = <proc-name>@<version>     -- declarations first
//! <name> -> <name>                        -- one edge per line
//! <a> | <b> | <c>                         -- pipeline sugar for (a,b),(b,c)
//! ```
//!
//! Names are `[A-Za-z_][A-Za-z0-9_-]*`. The parsed graph is validated
//! structurally here: declared endpoints, acyclic, non-empty.

use std::collections::BTreeMap;

use super::{FlowError, FlowGraph, ProcessorRef};

fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

struct Line<'a> {
    text: &'a str,
    number: usize,
    cursor: usize,
}

impl<'a> Line<'a> {
    fn col(&self) -> usize {
        self.cursor + 1
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, FlowError> {
        Err(FlowError::Syntax {
            line: self.number,
            col: self.col(),
            msg: msg.into(),
        })
    }

    fn skip_spaces(&mut self) {
        while self.rest().starts_with([' ', '\t']) {
            self.cursor += 1;
        }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.cursor..]
    }

    fn at_end(&mut self) -> bool {
        self.skip_spaces();
        self.rest().is_empty()
    }

    fn name(&mut self) -> Result<&'a str, FlowError> {
        self.skip_spaces();
        let rest = self.rest();
        let mut chars = rest.char_indices();
        match chars.next() {
            Some((_, c)) if is_name_start(c) => {}
            _ => return self.err("expected a name"),
        }
        let end = chars
            .find(|(_, c)| !is_name_char(*c))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        let name = &rest[..end];
        self.cursor += end;
        Ok(name)
    }

    fn literal(&mut self, lit: &str) -> Result<(), FlowError> {
        self.skip_spaces();
        if let Some(rest) = self.rest().strip_prefix(lit) {
            self.cursor = self.text.len() - rest.len();
            Ok(())
        } else {
            self.err(format!("expected `{lit}`"))
        }
    }

    fn try_literal(&mut self, lit: &str) -> bool {
        self.skip_spaces();
        if let Some(rest) = self.rest().strip_prefix(lit) {
            self.cursor = self.text.len() - rest.len();
            true
        } else {
            false
        }
    }

    fn version(&mut self) -> Result<u64, FlowError> {
        self.skip_spaces();
        let rest = self.rest();
        let end = rest
            .char_indices()
            .find(|(_, c)| !c.is_ascii_digit())
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if end == 0 {
            return self.err("expected a version number");
        }
        let v: u64 = rest[..end]
            .parse()
            .map_err(|_| FlowError::Syntax {
                line: self.number,
                col: self.col(),
                msg: "version out of range".into(),
            })?;
        if v == 0 {
            return self.err("version must be >= 1");
        }
        self.cursor += end;
        Ok(v)
    }
}

/// Parses DSL text into a validated [`FlowGraph`].
pub fn parse_flow(text: &str) -> Result<FlowGraph, FlowError> {
    let mut nodes: BTreeMap<String, ProcessorRef> = BTreeMap::new();
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut seen_edge = false;

    for (idx, raw) in text.lines().enumerate() {
        let number = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let mut line = Line {
            text: content,
            number,
            cursor: 0,
        };
        line.skip_spaces();

        if line.rest().starts_with("node ") || line.rest() == "node" {
            if seen_edge {
                return line.err("node declarations must precede edges");
            }
            line.literal("node")?;
            let name = line.name()?.to_string();
            line.literal("=")?;
            let proc = line.name()?.to_string();
            line.literal("@")?;
            let version = line.version()?;
            if !line.at_end() {
                return line.err("unexpected trailing input");
            }
            if nodes.contains_key(&name) {
                return line.err(format!("node `{name}` already declared"));
            }
            nodes.insert(name, ProcessorRef { name: proc, version });
            continue;
        }

        // edge forms: `a -> b` or pipeline `a | b | c`
        let first = line.name()?.to_string();
        if line.try_literal("->") {
            let second = line.name()?.to_string();
            if !line.at_end() {
                return line.err("unexpected trailing input after edge");
            }
            push_edge(&nodes, &mut edges, first, second, &line)?;
            seen_edge = true;
        } else if line.try_literal("|") {
            let mut chain = vec![first, line.name()?.to_string()];
            while line.try_literal("|") {
                chain.push(line.name()?.to_string());
            }
            if !line.at_end() {
                return line.err("unexpected trailing input after pipeline");
            }
            for pair in chain.windows(2) {
                push_edge(&nodes, &mut edges, pair[0].clone(), pair[1].clone(), &line)?;
            }
            seen_edge = true;
        } else {
            return line.err("expected `->` or `|`");
        }
    }

    if nodes.is_empty() {
        return Err(FlowError::EmptyGraph);
    }
    let graph = FlowGraph { nodes, edges };
    graph.topo_order()?; // rejects cycles
    Ok(graph)
}

fn push_edge(
    nodes: &BTreeMap<String, ProcessorRef>,
    edges: &mut Vec<(String, String)>,
    from: String,
    to: String,
    line: &Line<'_>,
) -> Result<(), FlowError> {
    for end in [&from, &to] {
        if !nodes.contains_key(end) {
            return Err(FlowError::UnknownNodeInEdge {
                node: end.clone(),
                line: line.number,
            });
        }
    }
    if edges.iter().any(|(f, t)| *f == from && *t == to) {
        return Err(FlowError::Syntax {
            line: line.number,
            col: 1,
            msg: format!("duplicate edge {from} -> {to}"),
        });
    }
    edges.push((from, to));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_two_node_graph() {
        let g = parse_flow("node s = src@1\nnode k = sink@1\ns -> k").unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges, vec![("s".to_string(), "k".to_string())]);
        assert_eq!(g.sources(), vec!["s"]);
        assert_eq!(g.sinks(), vec!["k"]);
    }

    #[test]
    fn pipeline_sugar_expands_to_consecutive_edges() {
        let text = "node a = p@1\nnode b = p@1\nnode c = p@1\na | b | c";
        let g = parse_flow(text).unwrap();
        assert_eq!(
            g.edges,
            vec![
                ("a".to_string(), "b".to_string()),
                ("b".to_string(), "c".to_string())
            ]
        );
    }

    #[test]
    fn comments_and_blank_lines_are_ignored.() {
        let text = "# pipeline\n\nnode a = p@1  # the source\nnode b = p@1\na -> b\n";
        let g = parse_flow(text).unwrap();
        assert_eq!(g.nodes.len(), 2);
    }

    #[test]
    fn cycle_is_detected() {
        let text = "node a = p@1\nnode b = p@1\nnode c = p@1\na -> b\nb -> c\nc -> a";
        assert!(matches!(parse_flow(text), Err(FlowError::CycleDetected)));
    }

    #[test]
    fn self_edge_is_a_cycle() {
        let text = "node a = p@1\na -> a";
        assert!(matches!(parse_flow(text), Err(FlowError::CycleDetected)));
    }

    #[test]
    fn unknown_edge_endpoint_is_reported() {
        let text = "node a = p@1\na -> ghost";
        match parse_flow(text) {
            Err(FlowError::UnknownNodeInEdge { node, line }) => {
                assert_eq!(node, "ghost");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn empty_text_is_an_empty_graph() {
        assert!(matches!(parse_flow(""), Err(FlowError::EmptyGraph)));
        assert!(matches!(parse_flow("# only comments\n"), Err(FlowError::EmptyGraph)));
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        match parse_flow("node a = p@1\nnode a = p@1") {
            Err(FlowError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected: {other:?}"),
        }
        match parse_flow("node x p@1") {
            Err(FlowError::Syntax { line, col, .. }) => {
                assert_eq!(line, 1);
                assert!(col > 1);
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn declarations_after_edges_are_rejected() {
        let text = "node a = p@1\nnode b = p@1\na -> b\nnode c = p@1";
        assert!(matches!(parse_flow(text), Err(FlowError::Syntax { line: 4, .. })));
    }

    #[test]
    fn zero_version_is_rejected() {
        assert!(matches!(
            parse_flow("node a = p@0"),
            Err(FlowError::Syntax { .. })
        ));
    }

    /// Brute-force cycle oracle: enumerate all digraphs on up to 4 nodes and
    /// compare the parser's verdict with a reachability-based cycle search.
    #[test]
    fn cycle_verdict_matches_brute_force_on_all_small_digraphs() {
        for n in 1usize..=4 {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .collect();
            for mask in 0u32..(1 << pairs.len()) {
                let edges: Vec<(usize, usize)> = pairs
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask & (1 << k) != 0)
                    .map(|(_, e)| *e)
                    .collect();

                // oracle: does any node reach itself through >= 1 edge?
                let mut reach = vec![vec![false; n]; n];
                for &(i, j) in &edges {
                    reach[i][j] = true;
                }
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            if reach[i][k] && reach[k][j] {
                                reach[i][j] = true;
                            }
                        }
                    }
                }
                let has_cycle = (0..n).any(|i| reach[i][i]);

                let mut text = String::new();
                for i in 0..n {
                    text.push_str(&format!("node n{i} = p@1\n"));
                }
                for (i, j) in &edges {
                    text.push_str(&format!("n{i} -> n{j}\n"));
                }
                match parse_flow(&text) {
                    Ok(_) => assert!(!has_cycle, "parser accepted cyclic {edges:?}"),
                    Err(FlowError::CycleDetected) => {
                        assert!(has_cycle, "parser rejected acyclic {edges:?}")
                    }
                    Err(other) => panic!("unexpected error on {edges:?}: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn print_parse_round_trip_is_isomorphic() {
        let text = "node s = src@1\nnode m = map@2\nnode k = sink@1\ns | m | k";
        let g = parse_flow(text).unwrap();
        let printed = g.to_string();
        let g2 = parse_flow(&printed).unwrap();
        assert_eq!(g.nodes, g2.nodes);
        let mut e1 = g.edges.clone();
        let mut e2 = g2.edges.clone();
        e1.sort();
        e2.sort();
        assert_eq!(e1, e2);
    }
}
