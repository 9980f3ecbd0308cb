//! Query planning: model selection plus the reasoning DAG.
//!
//! A plan has one perception node per selected role, a single state node
//! (`op = "twin"`) owning the windowed scene graphs, and reasoning nodes
//! whose predicate programs are evaluated in topological order each frame.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{extract_json_block, ChatError, ChatMessage, ChatTransport, EndpointConfig, HttpChat};
use crate::dsl::ast::{Expr, Selector, SpatialPred, TemporalOp};
use crate::dsl::{parse_any, PredicateProgram};
use crate::perception::ProviderRole;
use crate::twin::TrackingParams;

pub const PLAN_VERSION: u32 = 1;
pub const DEFAULT_WINDOW: usize = 6;
pub const STATE_OP: &str = "twin";
/// Reasoning-node parameters the engine understands.
pub const REASONING_PARAMS: [&str; 1] = ["move_threshold"];

pub const PLANNER_SYSTEM_PROMPT: &str = include_str!("../assets/planner_system_v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Perception,
    State,
    Reasoning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: String,
    pub kind: NodeKind,
    pub op: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub deps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub role: ProviderRole,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub version: u32,
    pub query: String,
    pub models: Vec<ModelChoice>,
    pub window_size: usize,
    pub tracking: TrackingParams,
    pub nodes: Vec<PlanNode>,
    pub output_node: String,
    /// Reasoning node id to predicate program source.
    pub programs: BTreeMap<String, String>,
}

impl ExecutionPlan {
    pub fn roles(&self) -> BTreeSet<ProviderRole> {
        self.models.iter().map(|m| m.role).collect()
    }

    pub fn node(&self, id: &str) -> Option<&PlanNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Parsed programs keyed by node id. Fails on the first unparseable one.
    pub fn parsed_programs(&self) -> Result<BTreeMap<String, PredicateProgram>, PlanInvalid> {
        self.programs
            .iter()
            .map(|(id, src)| {
                parse_any(src)
                    .map(|p| (id.clone(), p))
                    .map_err(|e| PlanInvalid(vec![format!("program {id}: {e}")]))
            })
            .collect()
    }

    /// Roles needed by the programs, always including the segmenter.
    pub fn required_roles(&self) -> BTreeSet<ProviderRole> {
        let mut roles = BTreeSet::from([ProviderRole::Segmenter]);
        for src in self.programs.values() {
            if let Ok(p) = parse_any(src) {
                roles.extend(p.root.required_roles());
            }
        }
        roles
    }

    pub fn uses_temporal(&self) -> bool {
        self.programs
            .values()
            .filter_map(|src| parse_any(src).ok())
            .any(|p| p.root.uses_temporal())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans always serialize")
    }
}

/// Every reason a plan was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanInvalid(pub Vec<String>);

impl fmt::Display for PlanInvalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid plan: {}", self.0.join("; "))
    }
}

impl std::error::Error for PlanInvalid {}

impl PlanInvalid {
    pub fn has(&self, reason: &str) -> bool {
        self.0.iter().any(|r| r == reason)
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Invalid(#[from] PlanInvalid),
    #[error("planner provider unreachable: {0}")]
    ProviderUnreachable(String),
}

/// Operator name a reasoning node's `op` must carry for its program.
pub fn program_op(e: &Expr) -> &'static str {
    match e {
        Expr::All => "all",
        Expr::Node(_) => "node",
        Expr::Category(_) => "category",
        Expr::Attr { .. } => "attr",
        Expr::Spatial { pred, .. } => pred.name(),
        Expr::Temporal { op, .. } => op.name(),
        Expr::And(_) => "and",
        Expr::Or(_) => "or",
        Expr::Not(_) => "not",
        Expr::Select { selector, .. } => selector.name(),
        Expr::Semantic(_) => "semantic_select",
    }
}

fn find_cycle(ids: &[&str], deps: &BTreeMap<&str, Vec<&str>>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit<'a>(
        n: &'a str,
        deps: &BTreeMap<&'a str, Vec<&'a str>>,
        marks: &mut BTreeMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        marks.insert(n, Mark::Active);
        stack.push(n);
        for &d in deps.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            match marks.get(d).copied() {
                Some(Mark::Active) => {
                    let start = stack.iter().position(|&s| s == d).expect("active nodes are on the stack");
                    let mut cycle: Vec<String> = stack[start..].iter().map(|s| s.to_string()).collect();
                    let min = (0..cycle.len()).min_by_key(|&i| &cycle[i]).unwrap_or(0);
                    cycle.rotate_left(min);
                    return Some(cycle);
                }
                Some(Mark::New) => {
                    if let Some(c) = visit(d, deps, marks, stack) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        stack.pop();
        marks.insert(n, Mark::Done);
        None
    }
    let mut marks: BTreeMap<&str, Mark> = ids.iter().map(|&i| (i, Mark::New)).collect();
    let mut sorted: Vec<&str> = ids.to_vec();
    sorted.sort();
    for id in sorted {
        if marks[id] == Mark::New {
            if let Some(c) = visit(id, deps, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// Checks the structural rules of a plan, collecting every violation.
pub fn validate_plan(plan: &ExecutionPlan) -> Result<(), PlanInvalid> {
    let mut reasons = Vec::new();
    if plan.version != PLAN_VERSION {
        reasons.push(format!("unsupported version {} (expected {PLAN_VERSION})", plan.version));
    }
    if !(plan.tracking.lambda.is_finite() && plan.tracking.lambda >= 0.0) {
        reasons.push(format!("tracking.lambda must be >= 0, got {}", plan.tracking.lambda));
    }
    if !(plan.tracking.tau_match > 0.0 && plan.tracking.tau_match < 1.0) {
        reasons.push(format!("tracking.tau_match must be in (0, 1), got {}", plan.tracking.tau_match));
    }

    let mut ids: BTreeSet<&str> = BTreeSet::new();
    for n in &plan.nodes {
        if n.id.is_empty() {
            reasons.push("node with empty id".into());
        } else if !ids.insert(&n.id) {
            reasons.push(format!("duplicate node id: {}", n.id));
        }
    }
    let kind_of: BTreeMap<&str, NodeKind> = plan.nodes.iter().map(|n| (n.id.as_str(), n.kind)).collect();

    let mut dep_map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for n in &plan.nodes {
        for d in &n.deps {
            if !ids.contains(d.as_str()) {
                reasons.push(format!("unresolved dependency: {} -> {d}", n.id));
            }
        }
        dep_map.insert(&n.id, n.deps.iter().map(String::as_str).filter(|d| ids.contains(d)).collect());
    }
    let id_list: Vec<&str> = ids.iter().copied().collect();
    let acyclic = match find_cycle(&id_list, &dep_map) {
        Some(c) => {
            reasons.push(format!("cycle: {}", c.join(",")));
            false
        }
        None => true,
    };

    // kind partition
    let model_roles = plan.roles();
    if model_roles.len() != plan.models.len() {
        reasons.push("models list a role more than once".into());
    }
    let mut perception_roles = BTreeSet::new();
    let mut state_nodes = Vec::new();
    for n in &plan.nodes {
        match n.kind {
            NodeKind::Perception => {
                match n.op.parse::<ProviderRole>() {
                    Ok(r) => {
                        if !perception_roles.insert(r) {
                            reasons.push(format!("perception role {r} has more than one node"));
                        }
                    }
                    Err(_) => reasons.push(format!("kind partition: perception node {} has op `{}`, expected a provider role", n.id, n.op)),
                }
                if !n.deps.is_empty() {
                    reasons.push(format!("kind partition: perception node {} has dependencies", n.id));
                }
            }
            NodeKind::State => {
                state_nodes.push(n.id.as_str());
                if n.op != STATE_OP {
                    reasons.push(format!("kind partition: state node {} has op `{}`, expected `{STATE_OP}`", n.id, n.op));
                }
                for d in &n.deps {
                    if kind_of.get(d.as_str()).is_some_and(|k| *k != NodeKind::Perception) {
                        reasons.push(format!("kind partition: state node {} depends on non-perception node {d}", n.id));
                    }
                }
            }
            NodeKind::Reasoning => {
                for d in &n.deps {
                    if kind_of.get(d.as_str()) == Some(&NodeKind::Perception) {
                        reasons.push(format!("kind partition: reasoning node {} depends on perception node {d}", n.id));
                    }
                }
                for k in n.params.keys() {
                    if !REASONING_PARAMS.contains(&k.as_str()) {
                        reasons.push(format!("node {}: unknown parameter `{k}`", n.id));
                    }
                }
                if let Some(v) = n.params.get("move_threshold") {
                    if !v.as_f64().is_some_and(|t| t >= 0.0) {
                        reasons.push(format!("node {}: move_threshold must be a non-negative number", n.id));
                    }
                }
            }
        }
        if n.kind != NodeKind::Reasoning && !n.params.is_empty() {
            reasons.push(format!("node {}: only reasoning nodes take parameters", n.id));
        }
    }
    match state_nodes.len() {
        1 => {}
        0 => reasons.push("kind partition: no state node".into()),
        k => reasons.push(format!("kind partition: {k} state nodes, expected exactly one")),
    }
    if perception_roles != model_roles {
        reasons.push("perception nodes do not match the selected models".into());
    }
    if !model_roles.contains(&ProviderRole::Segmenter) {
        reasons.push("missing capability: segmenter".into());
    }

    // reasoning nodes reach the state node
    if acyclic && state_nodes.len() == 1 {
        let state = state_nodes[0];
        let mut memo: BTreeMap<&str, bool> = BTreeMap::new();
        fn reaches<'a>(n: &'a str, target: &str, deps: &BTreeMap<&'a str, Vec<&'a str>>, memo: &mut BTreeMap<&'a str, bool>) -> bool {
            if n == target {
                return true;
            }
            if let Some(&r) = memo.get(n) {
                return r;
            }
            let r = deps.get(n).is_some_and(|ds| ds.iter().any(|d| reaches(d, target, deps, memo)));
            memo.insert(n, r);
            r
        }
        for n in plan.nodes.iter().filter(|n| n.kind == NodeKind::Reasoning) {
            if !reaches(&n.id, state, &dep_map, &mut memo) {
                reasons.push(format!("reasoning node {} does not depend on the state node", n.id));
            }
        }
    }

    // output node
    match kind_of.get(plan.output_node.as_str()) {
        None => reasons.push(format!("output node {} does not exist", plan.output_node)),
        Some(NodeKind::Reasoning) => {
            if let Some(n) = plan.nodes.iter().find(|n| n.deps.contains(&plan.output_node)) {
                reasons.push(format!("output node {} has dependent {}", plan.output_node, n.id));
            }
        }
        Some(_) => reasons.push(format!("output node {} is not a reasoning node", plan.output_node)),
    }

    // programs
    let reasoning_ids: BTreeSet<&str> = plan
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Reasoning)
        .map(|n| n.id.as_str())
        .collect();
    for id in &reasoning_ids {
        if !plan.programs.contains_key(*id) {
            reasons.push(format!("reasoning node {id} has no program"));
        }
    }
    let mut needed = BTreeSet::new();
    for (id, src) in &plan.programs {
        let Some(node) = plan.node(id).filter(|n| n.kind == NodeKind::Reasoning) else {
            reasons.push(format!("program {id} is not attached to a reasoning node"));
            continue;
        };
        match parse_any(src) {
            Err(e) => reasons.push(format!("program {id}: {e}")),
            Ok(p) => {
                let op = program_op(&p.root);
                if node.op != op {
                    reasons.push(format!("node {id}: op `{}` does not match program operator `{op}`", node.op));
                }
                for r in p.root.node_refs() {
                    if !reasoning_ids.contains(r.as_str()) {
                        reasons.push(format!("program {id}: reference to non-reasoning node {r}"));
                    } else if !node.deps.contains(&r) {
                        reasons.push(format!("program {id}: reference to {r} is not a dependency"));
                    }
                }
                needed.extend(p.root.required_roles());
            }
        }
    }
    for role in needed.difference(&model_roles) {
        reasons.push(format!("missing capability: {role}"));
    }

    if reasons.is_empty() {
        Ok(())
    } else {
        Err(PlanInvalid(reasons))
    }
}

/// Kahn's algorithm, ready nodes taken in lexicographic id order.
/// Precondition: the plan validates.
pub fn topo_order(plan: &ExecutionPlan) -> Vec<String> {
    let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for n in &plan.nodes {
        indegree.entry(&n.id).or_insert(0);
        for d in &n.deps {
            *indegree.entry(&n.id).or_insert(0) += 1;
            dependents.entry(d).or_default().push(&n.id);
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
    let mut order = Vec::with_capacity(plan.nodes.len());
    while let Some(n) = ready.pop_first() {
        order.push(n.to_string());
        for &m in dependents.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indegree.get_mut(m).expect("every dependent is a node");
            *d -= 1;
            if *d == 0 {
                ready.insert(m);
            }
        }
    }
    order
}

fn perception_id(role: ProviderRole) -> String {
    format!("p_{}", role.as_str())
}

fn justification(role: ProviderRole) -> &'static str {
    match role {
        ProviderRole::Segmenter => "object masks for every frame",
        ProviderRole::Embedder => "visual features for cross-frame identity",
        ProviderRole::Depth => "per-object depth for front/behind relations",
        ProviderRole::Detector => "open-vocabulary category labels",
    }
}

/// Rebuilds perception nodes and the state node's deps from `roles`.
fn set_models(plan: &mut ExecutionPlan, roles: &BTreeSet<ProviderRole>, note: Option<&str>) {
    plan.models = roles
        .iter()
        .map(|&role| ModelChoice {
            role,
            justification: note.unwrap_or(justification(role)).to_string(),
        })
        .collect();
    plan.nodes.retain(|n| n.kind != NodeKind::Perception);
    let perception: Vec<PlanNode> = roles
        .iter()
        .map(|&r| PlanNode {
            id: perception_id(r),
            kind: NodeKind::Perception,
            op: r.as_str().to_string(),
            params: BTreeMap::new(),
            deps: vec![],
        })
        .collect();
    let ids: Vec<String> = perception.iter().map(|n| n.id.clone()).collect();
    for n in plan.nodes.iter_mut().filter(|n| n.kind == NodeKind::State) {
        n.deps = ids.clone();
    }
    plan.nodes.splice(0..0, perception);
}

/// Model-selection ablation: every registered role is run.
pub fn without_model_selection(mut plan: ExecutionPlan) -> ExecutionPlan {
    let all: BTreeSet<ProviderRole> = ProviderRole::ALL.into_iter().collect();
    set_models(&mut plan, &all, Some("model selection disabled: all registered roles"));
    plan
}

// ---------------------------------------------------------------------
// Rule planner

const SKIP_WORDS: &[&str] = &[
    "a", "an", "the", "that", "which", "who", "whom", "whose", "is", "are", "was", "were", "be", "been",
    "being", "has", "have", "had", "does", "did", "do", "please", "me", "us", "of", "to", "in", "on", "at",
    "by", "with", "from", "into", "onto", "frame", "frames", "where", "when", "there", "it", "its", "then",
    "first", "just", "currently", "now", "video", "scene", "segment", "find", "show", "highlight", "select",
    "mark", "identify", "track", "locate", "detect", "give", "get", "and", "any",
];

const GENERIC_WORDS: &[&str] = &[
    "what", "whatever", "which", "whichever", "object", "objects", "thing", "things", "one", "ones", "item",
    "items", "everything", "anything", "something", "all", "every", "each", "stuff",
];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Relation {
    Spatial(SpatialPred),
    Pick(Selector),
    Motion(TemporalOp),
    Toward,
}

impl Relation {
    fn binary(&self) -> bool {
        !matches!(self, Relation::Motion(_))
    }
}

/// Phrase table, longest phrases first so "in front of" wins over "of".
const PHRASES: &[(&[&str], Relation)] = &[
    (&["in", "front", "of"], Relation::Spatial(SpatialPred::InFrontOf)),
    (&["moving", "toward"], Relation::Toward),
    (&["moving", "towards"], Relation::Toward),
    (&["moved", "toward"], Relation::Toward),
    (&["moved", "towards"], Relation::Toward),
    (&["to", "the", "left", "of"], Relation::Spatial(SpatialPred::LeftOf)),
    (&["to", "the", "right", "of"], Relation::Spatial(SpatialPred::RightOf)),
    (&["on", "top", "of"], Relation::Spatial(SpatialPred::Above)),
    (&["left", "of"], Relation::Spatial(SpatialPred::LeftOf)),
    (&["right", "of"], Relation::Spatial(SpatialPred::RightOf)),
    (&["next", "to"], Relation::Spatial(SpatialPred::Near)),
    (&["close", "to"], Relation::Spatial(SpatialPred::Near)),
    (&["closest", "to"], Relation::Pick(Selector::ClosestTo)),
    (&["nearest", "to"], Relation::Pick(Selector::ClosestTo)),
    (&["farthest", "from"], Relation::Pick(Selector::FarthestFrom)),
    (&["furthest", "from"], Relation::Pick(Selector::FarthestFrom)),
    (&["behind"], Relation::Spatial(SpatialPred::Behind)),
    (&["above"], Relation::Spatial(SpatialPred::Above)),
    (&["over"], Relation::Spatial(SpatialPred::Above)),
    (&["below"], Relation::Spatial(SpatialPred::Below)),
    (&["under"], Relation::Spatial(SpatialPred::Below)),
    (&["beneath"], Relation::Spatial(SpatialPred::Below)),
    (&["near"], Relation::Spatial(SpatialPred::Near)),
    (&["beside"], Relation::Spatial(SpatialPred::Near)),
    (&["overlapping"], Relation::Spatial(SpatialPred::Overlaps)),
    (&["overlaps"], Relation::Spatial(SpatialPred::Overlaps)),
    (&["toward"], Relation::Toward),
    (&["towards"], Relation::Toward),
    (&["approaching"], Relation::Toward),
    (&["approached"], Relation::Toward),
    (&["moved"], Relation::Motion(TemporalOp::Moved)),
    (&["moving"], Relation::Motion(TemporalOp::Moved)),
    (&["moves"], Relation::Motion(TemporalOp::Moved)),
    (&["move"], Relation::Motion(TemporalOp::Moved)),
    (&["entered"], Relation::Motion(TemporalOp::Entered)),
    (&["enters"], Relation::Motion(TemporalOp::Entered)),
    (&["enter"], Relation::Motion(TemporalOp::Entered)),
    (&["appeared"], Relation::Motion(TemporalOp::Entered)),
    (&["appears"], Relation::Motion(TemporalOp::Entered)),
    (&["exited"], Relation::Motion(TemporalOp::Exited)),
    (&["exits"], Relation::Motion(TemporalOp::Exited)),
    (&["exit"], Relation::Motion(TemporalOp::Exited)),
    (&["disappeared"], Relation::Motion(TemporalOp::Exited)),
    (&["disappears"], Relation::Motion(TemporalOp::Exited)),
    (&["vanished"], Relation::Motion(TemporalOp::Exited)),
];

const CONNECTORS: &[(&str, TemporalOp)] = &[
    ("after", TemporalOp::After),
    ("once", TemporalOp::After),
    ("since", TemporalOp::After),
    ("while", TemporalOp::After),
    ("before", TemporalOp::Before),
    ("until", TemporalOp::Before),
];

#[derive(Debug, Default)]
struct Clause {
    subject: Vec<String>,
    pick: Option<Selector>,
    /// Relations in query order, each with its reference words.
    relations: Vec<(Relation, Vec<String>)>,
}

fn words(query: &str) -> Vec<String> {
    query
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn match_phrase(ws: &[String], i: usize) -> Option<(usize, Relation)> {
    PHRASES.iter().find_map(|(p, r)| {
        (ws.len() >= i + p.len() && ws[i..i + p.len()].iter().zip(p.iter()).all(|(a, b)| a == b))
            .then_some((p.len(), *r))
    })
}

fn content(ws: &[String]) -> Vec<String> {
    ws.iter()
        .filter(|w| !SKIP_WORDS.contains(&w.as_str()) && !GENERIC_WORDS.contains(&w.as_str()))
        .filter(|w| w.parse::<f64>().is_err())
        .cloned()
        .collect()
}

fn parse_clause(ws: &[String]) -> Clause {
    let mut hits = Vec::new();
    let mut i = 0;
    while i < ws.len() {
        match match_phrase(ws, i) {
            Some((len, rel)) => {
                hits.push((i, len, rel));
                i += len;
            }
            None => i += 1,
        }
    }
    let mut c = Clause::default();
    let first = hits.first().map_or(ws.len(), |h| h.0);
    for w in content(&ws[..first]) {
        match w.as_str() {
            "largest" | "biggest" => c.pick = Some(Selector::Largest),
            "smallest" | "tiniest" => c.pick = Some(Selector::Smallest),
            _ => c.subject.push(w),
        }
    }
    for (k, &(at, len, rel)) in hits.iter().enumerate() {
        let stop = hits.get(k + 1).map_or(ws.len(), |h| h.0);
        let reference = if rel.binary() {
            content(&ws[at + len..stop])
        } else {
            vec![]
        };
        c.relations.push((rel, reference));
    }
    c
}

struct Builder {
    nodes: Vec<(String, String)>,
}

impl Builder {
    fn add(&mut self, program: Expr) -> Expr {
        let id = format!("r{}", self.nodes.len());
        self.nodes.push((id.clone(), program.to_string()));
        Expr::Node(id)
    }

    /// Subject phrase as an expression: generic words mean every object.
    fn subject(&mut self, c: &Clause) -> Expr {
        let base = if c.subject.is_empty() {
            Expr::All
        } else {
            self.add(Expr::Semantic(c.subject.join(" ")))
        };
        match c.pick {
            Some(sel) => self.add(Expr::Select {
                selector: sel,
                args: vec![base],
            }),
            None => base,
        }
    }

    /// Head noun of a reference phrase as a category filter.
    fn noun(&mut self, noun: Option<&String>) -> Expr {
        match noun {
            Some(n) => self.add(Expr::Category(n.clone())),
            None => Expr::All,
        }
    }

    fn relate(&mut self, subject: Expr, c: &Clause) -> Expr {
        let mut parts = Vec::new();
        for (rel, reference) in &c.relations {
            let s = Box::new(subject.clone());
            parts.push(match *rel {
                Relation::Motion(op) => Expr::Temporal {
                    op,
                    args: vec![*s],
                    span: None,
                },
                Relation::Toward => Expr::Temporal {
                    op: TemporalOp::MovingToward,
                    args: vec![*s, self.noun(reference.last())],
                    span: None,
                },
                Relation::Spatial(pred) => Expr::Spatial {
                    pred,
                    subject: s,
                    target: Box::new(self.noun(reference.last())),
                },
                Relation::Pick(selector) => Expr::Select {
                    selector,
                    args: vec![*s, self.noun(reference.last())],
                },
            });
        }
        match parts.len() {
            0 => subject,
            1 => parts.pop().expect("one part"),
            _ => Expr::And(parts),
        }
    }
}

/// Largest `N` in "N frames" / "N frame", if any.
fn mentioned_span(ws: &[String]) -> Option<usize> {
    ws.windows(2)
        .filter(|w| w[1].starts_with("frame"))
        .filter_map(|w| w[0].parse::<usize>().ok())
        .max()
}

/// Deterministic keyword planner. Unknown queries become a single semantic
/// selection.
pub fn rule_plan(query: &str) -> ExecutionPlan {
    let ws = words(query);
    let split = ws
        .iter()
        .enumerate()
        .find_map(|(i, w)| CONNECTORS.iter().find(|(c, _)| c == w).map(|(_, op)| (i, *op)));

    let mut b = Builder { nodes: Vec::new() };
    let (main_ws, event) = match split {
        Some((i, op)) => (&ws[..i], Some((op, &ws[i + 1..]))),
        None => (&ws[..], None),
    };
    let root = match event {
        Some((op, ev_ws)) => {
            let ev = parse_clause(ev_ws);
            // an event's subject is the noun right before its verb
            let ev_subject = b.noun(ev.subject.first());
            let event_expr = b.relate(ev_subject, &ev);
            let main = parse_clause(main_ws);
            let subject = b.subject(&main);
            let body = b.relate(subject, &main);
            Expr::Temporal {
                op,
                args: vec![event_expr, body],
                span: None,
            }
        }
        None => {
            let main = parse_clause(main_ws);
            let subject = b.subject(&main);
            b.relate(subject, &main)
        }
    };
    let reuse = matches!(&root, Expr::Node(id) if b.nodes.last().is_some_and(|(last, _)| last == id));
    if !reuse {
        b.add(root);
    }
    assemble(query, b.nodes, mentioned_span(&ws))
}

fn assemble(query: &str, reasoning: Vec<(String, String)>, span: Option<usize>) -> ExecutionPlan {
    let mut plan = ExecutionPlan {
        version: PLAN_VERSION,
        query: query.to_string(),
        models: vec![],
        window_size: DEFAULT_WINDOW.max(span.unwrap_or(0)),
        tracking: TrackingParams::default(),
        nodes: vec![PlanNode {
            id: STATE_OP.into(),
            kind: NodeKind::State,
            op: STATE_OP.into(),
            params: BTreeMap::new(),
            deps: vec![],
        }],
        output_node: reasoning.last().map(|(id, _)| id.clone()).unwrap_or_default(),
        programs: BTreeMap::new(),
    };
    for (id, src) in reasoning {
        let program = parse_any(&src).expect("rule planner emits well-formed programs");
        let mut deps = vec![STATE_OP.to_string()];
        deps.extend(program.root.node_refs());
        plan.nodes.push(PlanNode {
            id: id.clone(),
            kind: NodeKind::Reasoning,
            op: program_op(&program.root).into(),
            params: BTreeMap::new(),
            deps,
        });
        plan.programs.insert(id, src);
    }
    let mut roles = plan.required_roles();
    roles.insert(ProviderRole::Embedder);
    set_models(&mut plan, &roles, None);
    plan
}

// ---------------------------------------------------------------------
// Providers

#[derive(Debug, Clone, PartialEq)]
pub enum PlannerProvider {
    RuleBased,
    ChatEndpoint(EndpointConfig),
}

fn parse_plan_reply(reply: &str, query: &str) -> Result<ExecutionPlan, String> {
    let block = extract_json_block(reply, '{').ok_or("reply contains no JSON object")?;
    let mut plan: ExecutionPlan = serde_json::from_str(block).map_err(|e| format!("plan JSON: {e}"))?;
    if plan.query.trim().is_empty() {
        plan.query = query.to_string();
    }
    validate_plan(&plan).map_err(|e| e.to_string())?;
    Ok(plan)
}

/// Asks a chat model for a plan; one repair round on an invalid reply,
/// then the rule planner.
pub fn plan_with_transport(query: &str, transport: &dyn ChatTransport) -> Result<ExecutionPlan, PlanError> {
    let unreachable = |e: ChatError| PlanError::ProviderUnreachable(e.to_string());
    let mut messages = vec![
        ChatMessage::system(PLANNER_SYSTEM_PROMPT),
        ChatMessage::user(query),
    ];
    let reply = transport.complete(&messages).map_err(unreachable)?;
    let problem = match parse_plan_reply(&reply, query) {
        Ok(p) => return Ok(p),
        Err(e) => e,
    };
    log::warn!("planner reply rejected ({problem}); asking for a repair");
    messages.push(ChatMessage::assistant(reply));
    messages.push(ChatMessage::user(format!(
        "That plan was rejected: {problem}. Reply with the corrected JSON plan only."
    )));
    let reply = transport.complete(&messages).map_err(unreachable)?;
    match parse_plan_reply(&reply, query) {
        Ok(p) => Ok(p),
        Err(e) => {
            log::warn!("repaired plan rejected ({e}); falling back to the rule planner");
            let plan = rule_plan(query);
            validate_plan(&plan)?;
            Ok(plan)
        }
    }
}

pub fn plan_query(query: &str, provider: &PlannerProvider) -> Result<ExecutionPlan, PlanError> {
    if query.trim().is_empty() {
        return Err(PlanError::EmptyQuery);
    }
    match provider {
        PlannerProvider::RuleBased => {
            let plan = rule_plan(query);
            validate_plan(&plan)?;
            Ok(plan)
        }
        PlannerProvider::ChatEndpoint(cfg) => {
            let chat = HttpChat::new(cfg.clone()).map_err(|e| PlanError::ProviderUnreachable(e.to_string()))?;
            plan_with_transport(query, &chat)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::testing::ScriptedChat;

    fn programs(p: &ExecutionPlan) -> Vec<String> {
        p.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Reasoning)
            .map(|n| p.programs[&n.id].clone())
            .collect()
    }

    fn minimal() -> ExecutionPlan {
        rule_plan("the cup")
    }

    #[test]
    fn rule_plan_examples() {
        let p = rule_plan("the cup");
        validate_plan(&p).unwrap();
        assert_eq!(programs(&p), vec![r#"(select "cup")"#]);
        assert_eq!(p.nodes.iter().find(|n| n.id == p.output_node).unwrap().op, "semantic_select");
        assert_eq!(p.roles(), BTreeSet::from([ProviderRole::Segmenter, ProviderRole::Embedder]));

        let p = rule_plan("segment the red cup");
        assert_eq!(programs(&p), vec![r#"(select "red cup")"#]);
        assert!(!p.roles().contains(&ProviderRole::Depth));

        let p = rule_plan("segment whatever is behind the chair");
        validate_plan(&p).unwrap();
        assert_eq!(
            programs(&p),
            vec![r#"(category "chair")"#, r#"(behind (all) (node "r0"))"#]
        );
        let out = p.node(&p.output_node).unwrap();
        assert_eq!(out.op, "behind");
        assert!(out.deps.contains(&"r0".to_string()));
        assert!(p.roles().contains(&ProviderRole::Depth));

        let p = rule_plan("the object behind the cup");
        assert_eq!(programs(&p), vec![r#"(category "cup")"#, r#"(behind (all) (node "r0"))"#]);

        let p = rule_plan("what moved after frame where the ball entered");
        validate_plan(&p).unwrap();
        assert!(p.uses_temporal());
        assert!(p.window_size >= 6);
        assert_eq!(
            programs(&p),
            vec![r#"(category "ball")"#, r#"(after (entered (node "r0")) (moved (all)))"#]
        );
    }

    #[test]
    fn implicit_behind_query_selects_depth() {
        let p = rule_plan("Segment objects that moved behind the dining table after the person sat down");
        validate_plan(&p).unwrap();
        let roles = p.roles();
        assert!(roles.contains(&ProviderRole::Segmenter));
        assert!(roles.contains(&ProviderRole::Depth));
    }

    #[test]
    fn window_follows_mentioned_span() {
        assert_eq!(rule_plan("what moved in the last 12 frames").window_size, 12);
        assert_eq!(rule_plan("what moved in the last 3 frames").window_size, 6);
    }

    #[test]
    fn selectors_and_toward() {
        let p = rule_plan("the largest cup");
        assert_eq!(programs(&p), vec![r#"(select "cup")"#, r#"(largest (node "r0"))"#]);
        let p = rule_plan("the car moving toward the person");
        assert_eq!(
            programs(&p),
            vec![r#"(select "car")"#, r#"(category "person")"#, r#"(moving_toward (node "r0") (node "r1"))"#]
        );
        let p = rule_plan("the cup closest to the lamp");
        assert!(!p.roles().contains(&ProviderRole::Depth));
        validate_plan(&p).unwrap();
    }

    #[test]
    fn validate_rejects_cycle() {
        let mut p = rule_plan("whatever is behind the chair");
        p.nodes.iter_mut().find(|n| n.id == "r0").unwrap().deps.push("r1".into());
        let err = validate_plan(&p).unwrap_err();
        assert!(err.has("cycle: r0,r1"), "{err}");
    }

    #[test]
    fn validate_rejects_missing_depth() {
        let mut p = rule_plan("whatever is behind the chair");
        let keep: BTreeSet<_> = [ProviderRole::Segmenter, ProviderRole::Embedder].into();
        set_models(&mut p, &keep, None);
        let err = validate_plan(&p).unwrap_err();
        assert!(err.has("missing capability: depth"), "{err}");
    }

    #[test]
    fn validate_rejects_kind_violations() {
        let mut p = minimal();
        p.nodes.push(PlanNode {
            id: "twin2".into(),
            kind: NodeKind::State,
            op: STATE_OP.into(),
            params: BTreeMap::new(),
            deps: vec![],
        });
        assert!(validate_plan(&p).unwrap_err().0.iter().any(|r| r.starts_with("kind partition")));

        let mut p = minimal();
        p.nodes[0].deps.push("twin".into());
        assert!(validate_plan(&p).unwrap_err().0.iter().any(|r| r.starts_with("kind partition")));

        let mut p = minimal();
        p.nodes.iter_mut().find(|n| n.kind == NodeKind::Reasoning).unwrap().deps.push("p_segmenter".into());
        assert!(validate_plan(&p).unwrap_err().0.iter().any(|r| r.starts_with("kind partition")));
    }

    #[test]
    fn validate_other_rules() {
        validate_plan(&minimal()).unwrap();

        let mut p = minimal();
        p.output_node = "twin".into();
        assert!(validate_plan(&p).is_err());

        let mut p = minimal();
        p.programs.insert("r0".into(), "(behind (all))".into());
        assert!(validate_plan(&p).unwrap_err().0[0].contains("program r0"));

        let mut p = minimal();
        p.nodes.iter_mut().find(|n| n.id == "r0").unwrap().deps.push("ghost".into());
        assert!(validate_plan(&p).unwrap_err().has("unresolved dependency: r0 -> ghost"));

        let mut p = rule_plan("whatever is behind the chair");
        p.nodes.iter_mut().find(|n| n.id == "r1").unwrap().deps.retain(|d| d != "r0");
        assert!(validate_plan(&p).is_err());

        let mut p = minimal();
        p.version = 2;
        assert!(validate_plan(&p).is_err());
    }

    fn bare(ids_deps: &[(&str, &[&str])]) -> ExecutionPlan {
        let mut p = minimal();
        p.nodes = ids_deps
            .iter()
            .map(|(id, deps)| PlanNode {
                id: id.to_string(),
                kind: NodeKind::Reasoning,
                op: "all".into(),
                params: BTreeMap::new(),
                deps: deps.iter().map(|d| d.to_string()).collect(),
            })
            .collect();
        p
    }

    #[test]
    fn topo_examples() {
        assert_eq!(topo_order(&bare(&[("c", &["b"]), ("b", &["a"]), ("a", &[])])), ["a", "b", "c"]);
        let diamond = bare(&[("d", &["b", "c"]), ("c", &["a"]), ("b", &["a"]), ("a", &[])]);
        assert_eq!(topo_order(&diamond), ["a", "b", "c", "d"]);
        assert_eq!(topo_order(&bare(&[("y", &[]), ("x", &[])])), ["x", "y"]);
        let p = rule_plan("what moved after the ball entered");
        let order = topo_order(&p);
        assert_eq!(order.last().unwrap(), &p.output_node);
    }

    #[test]
    fn plan_json_round_trip() {
        let p = rule_plan("segment whatever is behind the chair");
        let json = p.to_json();
        assert!(json.contains("\"version\": 1"));
        let back: ExecutionPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn model_selection_ablation() {
        let p = without_model_selection(minimal());
        validate_plan(&p).unwrap();
        assert_eq!(p.roles().len(), ProviderRole::ALL.len());
    }

    #[test]
    fn chat_plan_accepted() {
        let good = rule_plan("whatever is behind the chair").to_json();
        let chat = ScriptedChat::new(vec![Ok(format!("```json\n{good}\n```"))]);
        let p = plan_with_transport("whatever is behind the chair", &chat).unwrap();
        assert_eq!(p.to_json(), good);
        let sent = chat.requests.lock().unwrap();
        assert_eq!(sent[0][0].content, PLANNER_SYSTEM_PROMPT);
    }

    #[test]
    fn chat_plan_repaired_then_fallback() {
        let good = minimal().to_json();
        let chat = ScriptedChat::new(vec![Ok("sorry".into()), Ok(good.clone())]);
        assert_eq!(plan_with_transport("the cup", &chat).unwrap().to_json(), good);
        assert_eq!(chat.requests.lock().unwrap()[1].len(), 4);

        let chat = ScriptedChat::new(vec![Ok("{}".into()), Ok("{\"version\": 1}".into())]);
        assert_eq!(plan_with_transport("the cup", &chat).unwrap(), rule_plan("the cup"));

        let chat = ScriptedChat::new(vec![Err(ChatError::Unreachable("refused".into()))]);
        assert!(matches!(
            plan_with_transport("the cup", &chat),
            Err(PlanError::ProviderUnreachable(_))
        ));
    }

    #[test]
    fn provider_errors() {
        assert!(matches!(plan_query("  ", &PlannerProvider::RuleBased), Err(PlanError::EmptyQuery)));
        let bad = PlannerProvider::ChatEndpoint(EndpointConfig {
            url: "not a url".into(),
            model: "m".into(),
            api_key: None,
        });
        assert!(matches!(plan_query("the cup", &bad), Err(PlanError::ProviderUnreachable(_))));
    }

    const FUZZ_WORDS: &[&str] = &[
        "the", "cup", "table", "red", "car", "behind", "in front of", "left of", "right of", "above", "below",
        "near", "moved", "moving", "toward", "entered", "left", "after", "before", "while", "largest",
        "smallest", "closest to", "farthest from", "what", "segment", "frame", "10", "ball", "and", "not",
        "()", "\"", "(node", "overlapping", "stopped", "since", "until", "whatever", "!",
    ];

    proptest::proptest! {
        #[test]
        fn rule_plans_always_validate(words in proptest::collection::vec(proptest::sample::select(FUZZ_WORDS), 1..12)) {
            let q = words.join(" ");
            let plan = rule_plan(&q);
            proptest::prop_assert!(validate_plan(&plan).is_ok(), "{q}: {:?}", validate_plan(&plan));
        }
    }
}
