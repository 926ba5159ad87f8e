use std::collections::{BTreeMap, BTreeSet};

use super::term::{PrefixMap, Term, Triple};

/// A set of triples plus the prefixes declared by the document it came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    triples: BTreeSet<Triple>,
    prefixes: PrefixMap,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn with_prefixes(prefixes: PrefixMap) -> Self {
        Graph {
            triples: BTreeSet::new(),
            prefixes,
        }
    }

    /// Returns false when the triple was already present.
    pub fn insert(&mut self, t: Triple) -> bool {
        self.triples.insert(t)
    }

    pub fn remove(&mut self, t: &Triple) -> bool {
        self.triples.remove(t)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Triples in (subject, predicate, object) order.
    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn prefixes(&self) -> &PrefixMap {
        &self.prefixes
    }

    pub fn prefixes_mut(&mut self) -> &mut PrefixMap {
        &mut self.prefixes
    }

    pub fn objects<'a>(
        &'a self,
        subject: &'a Term,
        predicate: &'a str,
    ) -> impl Iterator<Item = &'a Term> {
        self.triples
            .iter()
            .filter(move |t| t.subject() == subject && t.predicate().as_iri() == Some(predicate))
            .map(|t| t.object())
    }

    /// Adjacency by predicate: predicate IRI → (subject, object) pairs.
    pub(crate) fn by_predicate(&self) -> BTreeMap<&str, Vec<(&Term, &Term)>> {
        let mut idx: BTreeMap<&str, Vec<(&Term, &Term)>> = BTreeMap::new();
        for t in &self.triples {
            if let Some(p) = t.predicate().as_iri() {
                idx.entry(p).or_default().push((t.subject(), t.object()));
            }
        }
        idx
    }
}

impl Extend<Triple> for Graph {
    fn extend<I: IntoIterator<Item = Triple>>(&mut self, iter: I) {
        self.triples.extend(iter)
    }
}

impl FromIterator<Triple> for Graph {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        Graph {
            triples: iter.into_iter().collect(),
            prefixes: PrefixMap::new(),
        }
    }
}

/// Per-context union of graphs. Every triple keeps the IRI of the graph it came from.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    graphs: BTreeMap<String, Graph>,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset::default()
    }

    pub fn graphs(&self) -> impl Iterator<Item = (&str, &Graph)> {
        self.graphs.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn graph(&self, context: &str) -> Option<&Graph> {
        self.graphs.get(context)
    }

    /// Context-annotated triples. The same triple from two contexts appears twice.
    pub fn quads(&self) -> impl Iterator<Item = (&str, &Triple)> {
        self.graphs
            .iter()
            .flat_map(|(c, g)| g.iter().map(move |t| (c.as_str(), t)))
    }

    pub fn len(&self) -> usize {
        self.graphs.values().map(Graph::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unions `graphs`, annotating each triple with its context. Repeated contexts are unioned.
pub fn merge_named<I, S>(graphs: I) -> Dataset
where
    I: IntoIterator<Item = (S, Graph)>,
    S: Into<String>,
{
    let mut ds = Dataset::new();
    for (ctx, g) in graphs {
        match ds.graphs.entry(ctx.into()) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(g);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let target = e.get_mut();
                target.prefixes.extend_missing(&g.prefixes);
                target.triples.extend(g.triples);
            }
        }
    }
    ds
}
