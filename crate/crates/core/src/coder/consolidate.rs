//! Three-step codebook cleanup over the code graph.

use std::collections::{BTreeMap, BTreeSet};

use super::codebook::Codebook;
use super::graph::CodeGraph;
use crate::artifact::{Artifact, Code};
use crate::config::CodingConfig;
use crate::error::LedgerError;
use crate::ids::ArtifactId;
use crate::ledger::{ActionDraft, ActionType, Journal};

fn live_code(j: &Journal, id: ArtifactId) -> Option<Code> {
    j.hierarchy.code(id).filter(|c| !c.deleted).cloned()
}

fn absorb(into: &mut Code, from: &Code) {
    into.quote_ids.extend(from.quote_ids.iter().copied());
    into.source_chunk_ids.extend(from.source_chunk_ids.iter().copied());
    into.frequency = into.source_chunk_ids.len();
}

fn tombstone(mut c: Code) -> Code {
    c.deleted = true;
    c.quote_ids.clear();
    c
}

/// Cleans up the coded hierarchy:
/// 1. each equivalence class keeps the member with the highest
///    `w_frequency * frequency + w_in_degree * in_degree` (ties to the lower
///    id), which absorbs the quotes and source chunks of the others;
/// 2. codes below `low_freq` that have a parent are subsumed into their most
///    specific parent, children before parents;
/// 3. codes still below `low_freq` are dropped and their quotes tombstoned.
///
/// Every merge, subsumption and drop is one ledger entry under `role`.
pub fn consolidate(journal: &mut Journal, graph: &CodeGraph, cfg: &CodingConfig, role: &str) -> Result<Codebook, LedgerError> {
    let first_aid = journal.ledger.last_aid() + 1;

    let mut survivor: BTreeMap<ArtifactId, ArtifactId> = BTreeMap::new();
    for (rep, members) in graph.classes() {
        let live: Vec<Code> = members.iter().filter_map(|m| live_code(journal, *m)).collect();
        let score = |c: &Code| cfg.w_frequency * c.frequency as f64 + cfg.w_in_degree * graph.in_degree.get(&c.code_id).copied().unwrap_or(0) as f64;
        let Some(winner) = live.iter().fold(None::<&Code>, |best, c| match best {
            Some(b) if score(c) <= score(b) => Some(b),
            _ => Some(c),
        }) else {
            continue;
        };
        survivor.insert(rep, winner.code_id);
        if live.len() < 2 {
            continue;
        }
        let mut merged = winner.clone();
        let mut payload = Vec::new();
        for loser in live.iter().filter(|c| c.code_id != winner.code_id) {
            absorb(&mut merged, loser);
            payload.push(Artifact::Code(tombstone(loser.clone())));
        }
        let others: Vec<String> = live.iter().filter(|c| c.code_id != winner.code_id).map(|c| c.code_id.to_string()).collect();
        let justification = format!("equivalence class merged into {} (highest merge score {:.3}); absorbed {}", winner.code_id, score(winner), others.join(", "));
        payload.insert(0, Artifact::Code(merged));
        journal.commit(ActionDraft::new(role, ActionType::Merge, live.iter().map(|c| c.code_id).collect(), payload, justification))?;
    }

    let edges: BTreeSet<(ArtifactId, ArtifactId)> = graph
        .edges
        .iter()
        .filter_map(|(c, p)| Some((*survivor.get(c)?, *survivor.get(p)?)))
        .filter(|(c, p)| c != p)
        .collect();
    let ancestors = |id: ArtifactId| -> Vec<ArtifactId> { edges.iter().filter(|(c, _)| *c == id).map(|(_, p)| *p).collect() };
    let n_desc = |id: ArtifactId| edges.iter().filter(|(_, p)| *p == id).count();
    let mut order: Vec<ArtifactId> = survivor.values().copied().collect::<BTreeSet<_>>().into_iter().collect();
    order.sort_by_key(|id| (n_desc(*id), *id));

    for &c in &order {
        let Some(code) = live_code(journal, c) else { continue };
        if code.frequency >= cfg.low_freq {
            continue;
        }
        let parents: Vec<ArtifactId> = ancestors(c).into_iter().filter(|p| live_code(journal, *p).is_some()).collect();
        let Some(&nearest) = parents.iter().max_by(|a, b| ancestors(**a).len().cmp(&ancestors(**b).len()).then_with(|| b.cmp(a))) else {
            continue;
        };
        let mut parent = live_code(journal, nearest).expect("live parent");
        absorb(&mut parent, &code);
        let justification = format!("frequency {} below {}; subsumed into parent {nearest} with its quotes", code.frequency, cfg.low_freq);
        journal.commit(ActionDraft::new(
            role,
            ActionType::Merge,
            vec![c, nearest],
            vec![Artifact::Code(parent), Artifact::Code(tombstone(code))],
            justification,
        ))?;
    }

    for &c in &order {
        let Some(code) = live_code(journal, c) else { continue };
        if code.frequency >= cfg.low_freq {
            continue;
        }
        let quotes: Vec<Artifact> = code
            .quote_ids
            .iter()
            .filter_map(|q| journal.hierarchy.quote(*q).filter(|q| !q.deleted).cloned())
            .map(|mut q| {
                q.deleted = true;
                Artifact::Quote(q)
            })
            .collect();
        let mut inputs = vec![c];
        inputs.extend(quotes.iter().map(Artifact::id));
        let mut payload = vec![Artifact::Code(tombstone(code.clone()))];
        payload.extend(quotes);
        let justification = format!("orphan code with frequency {} below {}; dropped and its quotes tombstoned", code.frequency, cfg.low_freq);
        journal.commit(ActionDraft::new(role, ActionType::Delete, inputs, payload, justification))?;
    }

    let live: BTreeSet<ArtifactId> = order.iter().copied().filter(|c| live_code(journal, *c).is_some()).collect();
    let final_graph = CodeGraph {
        nodes: live.clone(),
        class_of: live.iter().map(|c| (*c, *c)).collect(),
        edges: edges.into_iter().filter(|(c, p)| live.contains(c) && live.contains(p)).collect(),
        in_degree: graph.in_degree.iter().filter(|(c, _)| live.contains(c)).map(|(c, d)| (*c, *d)).collect(),
        repairs: graph.repairs.clone(),
    };
    Ok(Codebook::from_hierarchy(&journal.hierarchy, final_graph, (first_aid, journal.ledger.last_aid())))
}
