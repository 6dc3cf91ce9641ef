use std::fs;
use std::path::{Path, PathBuf};

use super::{
    GraphError, GraphHandle, MidPattern, Relation, SparqlEndpoint, TripleIndex, Triplet,
    NAME_RELATION,
};

/// Where a graph comes from.
#[derive(Debug, Clone)]
pub enum GraphSource {
    /// Tab-separated `head\trelation\ttail` file plus an optional
    /// `mid\tname` sidecar.
    File {
        triples: PathBuf,
        names: Option<PathBuf>,
        cvt_prefixes: Vec<String>,
        mid_pattern: MidPattern,
    },
    Remote {
        endpoint: SparqlEndpoint,
        cvt_prefixes: Vec<String>,
    },
}

impl GraphSource {
    pub fn file(triples: impl Into<PathBuf>) -> Self {
        GraphSource::File {
            triples: triples.into(),
            names: None,
            cvt_prefixes: Vec::new(),
            mid_pattern: MidPattern::default(),
        }
    }
}

/// Loads a graph. File sources are parsed eagerly and deduplicated; name
/// triples (`type.object.name`) go to the name table rather than the index.
pub fn load_graph(source: GraphSource) -> Result<GraphHandle, GraphError> {
    match source {
        GraphSource::Remote {
            endpoint,
            cvt_prefixes,
        } => Ok(GraphHandle::remote(endpoint, cvt_prefixes)),
        GraphSource::File {
            triples,
            names,
            cvt_prefixes,
            mid_pattern,
        } => {
            let text = read(&triples)?;
            let mut index = parse_triples(&text, &triples, &mid_pattern)?;
            if let Some(names) = names {
                let text = read(&names)?;
                parse_names(&text, &names, &mid_pattern, &mut index)?;
            }
            if index.is_empty() {
                return Err(GraphError::Empty);
            }
            Ok(GraphHandle::in_memory(index, cvt_prefixes))
        }
    }
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim_end_matches('\r')))
        .filter(|(_, line)| !line.trim().is_empty() && !line.starts_with('#'))
}

pub(crate) fn parse_triples(
    text: &str,
    path: &Path,
    pattern: &MidPattern,
) -> Result<TripleIndex, GraphError> {
    let malformed = |line: usize, reason: String| GraphError::Malformed {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut index = TripleIndex::new();
    for (number, line) in content_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [head, relation, tail] = fields[..] else {
            return Err(malformed(
                number,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        };
        let head = pattern
            .parse(head)
            .map_err(|e| malformed(number, e.to_string()))?;
        if relation == NAME_RELATION {
            if tail.is_empty() {
                return Err(malformed(number, "empty name".into()));
            }
            index.set_name(head, tail);
            continue;
        }
        let relation = Relation::new(relation).map_err(|e| malformed(number, e.to_string()))?;
        let tail = pattern
            .parse(tail)
            .map_err(|e| malformed(number, e.to_string()))?;
        index.insert(Triplet::new(head, relation, tail));
    }
    Ok(index)
}

fn parse_names(
    text: &str,
    path: &Path,
    pattern: &MidPattern,
    index: &mut TripleIndex,
) -> Result<(), GraphError> {
    for (number, line) in content_lines(text) {
        let malformed = |reason: String| GraphError::Malformed {
            path: path.display().to_string(),
            line: number,
            reason,
        };
        let (mid, name) = line
            .split_once('\t')
            .ok_or_else(|| malformed("expected mid<TAB>name".into()))?;
        let mid = pattern.parse(mid).map_err(|e| malformed(e.to_string()))?;
        if name.trim().is_empty() {
            return Err(malformed("empty name".into()));
        }
        index.set_name(mid, name.trim());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<TripleIndex, GraphError> {
        parse_triples(text, Path::new("test.tsv"), &MidPattern::default())
    }

    #[test]
    fn dedups_and_skips_comments() {
        let index = parse("# header\nm.a\tr.x\tm.b\n\nm.a\tr.x\tm.b\nm.b\tr.y\tm.c\n").unwrap();
        assert_eq!(index.len(), 2);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse("m.a\tr.x\tm.b\nm.a\tr.x\n").unwrap_err();
        match err {
            GraphError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse("m.a\tr.x\tAcme Corp\n").unwrap_err();
        assert!(matches!(err, GraphError::Malformed { line: 1, .. }));
    }

    #[test]
    fn name_triples_route_to_names() {
        let index = parse("m.x\ttype.object.name\tAcme\nm.x\tr.y\tm.z\n").unwrap();
        assert_eq!(
            index.name(&super::super::Mid::new("m.x").unwrap()),
            Some("Acme")
        );
        assert_eq!(index.len(), 1);
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.tsv");
        std::fs::write(&path, "# nothing\n").unwrap();
        let err = load_graph(GraphSource::file(&path)).unwrap_err();
        assert_eq!(err.to_string(), "empty graph");
    }

    #[test]
    fn missing_file_is_an_error() {
        let err = load_graph(GraphSource::file("/nonexistent/graph.tsv")).unwrap_err();
        assert!(matches!(err, GraphError::Io { .. }));
    }
}
