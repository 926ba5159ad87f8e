//! Basic graph pattern evaluation with sequence paths and numeric filters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::graph::{Dataset, Graph};
use super::query::{Query, TriplePattern};
use super::term::{PrefixMap, Term};

/// One solution, restricted to the selected variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Binding {
    values: BTreeMap<String, Term>,
}

impl Binding {
    pub fn get(&self, var: &str) -> Option<&Term> {
        self.values.get(var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Term)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `var=term` pairs in `order`, terms compacted with `prefixes`, tab separated.
    pub fn render(&self, order: &[String], prefixes: &PrefixMap) -> String {
        order
            .iter()
            .filter_map(|v| {
                self.values
                    .get(v)
                    .map(|t| format!("{v}={}", prefixes.render(t)))
            })
            .collect::<Vec<_>>()
            .join("\t")
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .values
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        f.write_str(&parts.join("\t"))
    }
}

type Solution<'g> = BTreeMap<&'g str, &'g Term>;

struct Index<'g> {
    by_pred: BTreeMap<&'g str, Vec<(&'g Term, &'g Term)>>,
}

impl<'g> Index<'g> {
    /// Nodes reachable from `start` by following `path`.
    fn walk(&self, start: &'g Term, path: &[String]) -> BTreeSet<&'g Term> {
        let mut frontier: BTreeSet<&Term> = BTreeSet::from([start]);
        for p in path {
            let Some(edges) = self.by_pred.get(p.as_str()) else {
                return BTreeSet::new();
            };
            frontier = edges
                .iter()
                .filter(|(s, _)| frontier.contains(s))
                .map(|(_, o)| *o)
                .collect();
            if frontier.is_empty() {
                break;
            }
        }
        frontier
    }

    fn starts(&self, path: &[String]) -> BTreeSet<&'g Term> {
        self.by_pred
            .get(path[0].as_str())
            .map(|e| e.iter().map(|(s, _)| *s).collect())
            .unwrap_or_default()
    }
}

fn resolve<'a, 'g: 'a>(t: &'a Term, sol: &Solution<'g>) -> Result<&'a Term, &'a str> {
    match t {
        Term::Variable(v) => sol.get(v.as_str()).copied().ok_or(v.as_str()),
        other => Ok(other),
    }
}

fn extend<'g>(idx: &Index<'g>, pat: &'g TriplePattern, sol: &Solution<'g>) -> Vec<Solution<'g>> {
    let subject = resolve(&pat.subject, sol);
    let object = resolve(&pat.object, sol);
    let starts: Vec<&'g Term> = match subject {
        Ok(s) => {
            // a constant from the query is not owned by the graph; find the graph's copy
            match idx.starts(&pat.path).into_iter().find(|t| *t == s) {
                Some(t) => vec![t],
                None => return Vec::new(),
            }
        }
        Err(_) => idx.starts(&pat.path).into_iter().collect(),
    };
    let mut out = Vec::new();
    for s in starts {
        for o in idx.walk(s, &pat.path) {
            if let Ok(want) = object {
                if want != o {
                    continue;
                }
            }
            let mut next = sol.clone();
            if let Err(v) = subject {
                next.insert(v, s);
            }
            if let Err(v) = object {
                // `?x p ?x` needs both ends equal
                if let Some(prev) = next.get(v) {
                    if *prev != o {
                        continue;
                    }
                }
                next.insert(v, o);
            }
            out.push(next);
        }
    }
    out
}

fn passes(q: &Query, sol: &Solution<'_>) -> bool {
    q.filters.iter().all(|f| {
        // a non-numeric or unbound operand is a type error: the solution is dropped
        sol.get(f.variable.as_str())
            .and_then(|t| t.as_literal())
            .and_then(|l| l.numeric_value())
            .is_some_and(|v| f.comparator.holds(v, f.value))
    })
}

/// Solutions of `q` over `g`, projected to the select list, deduplicated, and sorted by the
/// N-Triples text of the selected terms.
pub fn evaluate(g: &Graph, q: &Query) -> Vec<Binding> {
    let idx = Index {
        by_pred: g.by_predicate(),
    };
    let mut solutions: Vec<Solution<'_>> = vec![BTreeMap::new()];
    for pat in &q.patterns {
        solutions = solutions
            .iter()
            .flat_map(|s| extend(&idx, pat, s))
            .collect();
        if solutions.is_empty() {
            return Vec::new();
        }
    }
    let projected: BTreeSet<Vec<Term>> = solutions
        .into_iter()
        .filter(|s| passes(q, s))
        .map(|s| {
            q.select
                .iter()
                .map(|v| (*s.get(v.as_str()).expect("validated select variable")).clone())
                .collect()
        })
        .collect();
    let mut rows: Vec<(Vec<String>, Binding)> = projected
        .into_iter()
        .map(|terms| {
            let key = terms.iter().map(Term::to_string).collect();
            let values = q.select.iter().cloned().zip(terms).collect();
            (key, Binding { values })
        })
        .collect();
    rows.sort();
    rows.into_iter().map(|(_, b)| b).collect()
}

/// Evaluates the whole pattern inside each context, tagging solutions with that context.
pub fn evaluate_dataset(ds: &Dataset, q: &Query) -> Vec<(String, Binding)> {
    ds.graphs()
        .flat_map(|(ctx, g)| {
            evaluate(g, q)
                .into_iter()
                .map(move |b| (ctx.to_string(), b))
        })
        .collect()
}
