"""Text-based object retrieval over a scene graph.

Four query primitives compose every supported search:

* query_for_target(text)                    - rank all nodes by similarity
* query_for_reference_relation(ref, rel)    - nodes related to the best ref
* query_for_reference_relation_target(...)  - the same, re-ranked by target
* query_for_compare_dis(far|close, ...)     - farthest/closest target to a ref

A deterministic grammar planner turns common English commands into plans; an
optional LLM planner sends the command to a chat endpoint and parses the API
calls it writes back. Both produce the same QueryPlan shape and both validate
relations against the closed vocabulary. All queries are read-only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyGraph,
    EmptyOperand,
    LlmProtocolError,
    NoSuchRelation,
    UnparsableCommand,
)
from .features import ChatClient, TextEmbedder
from .graph import EDGE_RELATIONS, RELATIONS, SceneGraph


@dataclass
class RetrievalResult:
    items: list[tuple[int, float]]  # (node id, score), scores non-increasing
    query: str

    def top(self) -> int:
        if not self.items:
            raise EmptyOperand(f"no results for {self.query!r}")
        return self.items[0][0]

    def node_ids(self) -> list[int]:
        return [node_id for node_id, _ in self.items]


# -- plan structure ------------------------------------------------------------

@dataclass
class Target:
    text: str


@dataclass
class RefRelation:
    ref_text: str
    relation: str


@dataclass
class RefRelationTarget:
    ref_text: str
    relation: str
    target_text: str


@dataclass
class CompareDis:
    relation: str                 # "far" or "close"
    ref: "QueryPlan"
    targets: "QueryPlan"


ApiCall = Target | RefRelation | RefRelationTarget | CompareDis


@dataclass
class QueryPlan:
    steps: list[ApiCall]
    fallback: "QueryPlan | None" = None

    def validate(self) -> None:
        for step in self.steps:
            if isinstance(step, (RefRelation, RefRelationTarget)):
                if step.relation not in EDGE_RELATIONS:
                    raise NoSuchRelation(f"{step.relation!r} is not a stored edge relation")
            elif isinstance(step, CompareDis):
                if step.relation not in ("far", "close"):
                    raise NoSuchRelation(f"{step.relation!r} is not a distance comparison")
                step.ref.validate()
                step.targets.validate()
            elif not isinstance(step, Target):
                raise NoSuchRelation(f"unknown plan step {step!r}")
        if self.fallback is not None:
            self.fallback.validate()


# -- query primitives ----------------------------------------------------------

def query_for_target(graph: SceneGraph, text: str, embedder: TextEmbedder, top_k: int = 5) -> RetrievalResult:
    """Rank every node by cosine similarity to the embedded text."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if not graph.nodes:
        raise EmptyGraph("graph has no nodes")
    query_vec = embedder.embed([text])[0].astype(np.float64)
    qn = np.linalg.norm(query_vec)
    feats = np.stack([n.feature.astype(np.float64) for n in graph.nodes])
    norms = np.linalg.norm(feats, axis=1)
    scores = feats @ query_vec / np.where(norms * qn > 1e-12, norms * qn, 1.0)
    order = sorted(range(len(graph.nodes)), key=lambda i: (-scores[i], graph.nodes[i].id))
    items = [(graph.nodes[i].id, float(scores[i])) for i in order[:top_k]]
    return RetrievalResult(items=items, query=text)


def query_for_reference_relation(
    graph: SceneGraph,
    ref_text: str,
    relation: str,
    embedder: TextEmbedder,
    ref_top_k: int = 1,
) -> RetrievalResult:
    """All nodes connected to the best reference match by `relation` edges
    (edge direction: reference -> candidate), scored by the reference match."""
    if relation not in EDGE_RELATIONS:
        raise NoSuchRelation(f"{relation!r} cannot be used to follow edges")
    refs = query_for_target(graph, ref_text, embedder, top_k=ref_top_k)
    seen: set[int] = set()
    items: list[tuple[int, float]] = []
    for ref_id, ref_score in refs.items:
        for edge in graph.edges_from(ref_id):
            if edge.relation == relation and edge.target not in seen:
                seen.add(edge.target)
                items.append((edge.target, ref_score))
    items.sort(key=lambda it: (-it[1], it[0]))
    return RetrievalResult(items=items, query=f"{ref_text} -[{relation}]->")


def query_for_reference_relation_target(
    graph: SceneGraph,
    ref_text: str,
    relation: str,
    target_text: str,
    embedder: TextEmbedder,
    ref_top_k: int = 1,
) -> RetrievalResult:
    """Candidates from the relation query, re-ranked against the target text."""
    candidates = query_for_reference_relation(graph, ref_text, relation, embedder, ref_top_k)
    if not candidates.items:
        return RetrievalResult(items=[], query=f"{ref_text} -[{relation}]-> {target_text}")
    query_vec = embedder.embed([target_text])[0].astype(np.float64)
    qn = np.linalg.norm(query_vec)
    items = []
    for node_id, _ in candidates.items:
        feat = graph.node_by_id(node_id).feature.astype(np.float64)
        denom = np.linalg.norm(feat) * qn
        score = float(feat @ query_vec / denom) if denom > 1e-12 else 0.0
        items.append((node_id, score))
    items.sort(key=lambda it: (-it[1], it[0]))
    return RetrievalResult(items=items, query=f"{ref_text} -[{relation}]-> {target_text}")


def query_for_compare_dis(
    relation: str, ref: RetrievalResult, targets: RetrievalResult, graph: SceneGraph
) -> RetrievalResult:
    """The single farthest ("far") or nearest ("close") target to the
    reference result's best node, by center distance."""
    if relation not in ("far", "close"):
        raise NoSuchRelation(f"{relation!r} is not a distance comparison")
    if not ref.items or not targets.items:
        raise EmptyOperand("distance comparison needs non-empty reference and targets")
    ref_center = np.array(graph.node_by_id(ref.top()).center)
    scored = []
    for node_id, _ in targets.items:
        dist = float(np.linalg.norm(np.array(graph.node_by_id(node_id).center) - ref_center))
        scored.append((node_id, dist))
    pick = max if relation == "far" else min
    best = pick(scored, key=lambda it: (it[1], -it[0]) if relation == "far" else (it[1], it[0]))
    return RetrievalResult(items=[best], query=f"{relation}({ref.query}, {targets.query})")


# -- grammar planner -----------------------------------------------------------

# surface relation word -> stored relation, in the reference->candidate frame:
# "X on Y" matches edges Y -[above]-> X, "X in Y" matches Y -[contain]-> X.
SURFACE_RELATIONS: dict[str, str] = {
    "on top of": "above", "atop": "above", "on": "above", "above": "above",
    "over": "above", "upon": "above",
    "underneath": "below", "under": "below", "beneath": "below", "below": "below",
    "to the left of": "left", "on the left of": "left", "left of": "left",
    "to the right of": "right", "on the right of": "right", "right of": "right",
    "in front of": "front", "front of": "front",
    "behind": "back", "in back of": "back", "back of": "back",
    "inside": "contain", "within": "contain", "in": "contain",
    "containing": "included", "holding": "included", "that contains": "included",
    "beside": "left", "next to": "left",  # ambiguous side: executor falls back to "right"
}

_AMBIGUOUS_SIDE = {"beside", "next to"}

_COURTESY = re.compile(
    r"^(please\s+)?(help\s+me\s+)?(can\s+you\s+)?(could\s+you\s+)?(please\s+)?", re.IGNORECASE
)
_ARTICLE = r"(?:a|an|the|all)\s+"


def _strip_article(text: str) -> str:
    return re.sub(rf"^{_ARTICLE}", "", text.strip(), flags=re.IGNORECASE)


def _relation_alternatives() -> list[str]:
    # longest surface forms first so "on top of" wins over "on"
    return sorted(SURFACE_RELATIONS, key=len, reverse=True)


def plan_query(command: str, planner: "Planner | None" = None) -> QueryPlan:
    """Parse a natural-language command into a validated QueryPlan.

    With no planner the deterministic grammar is used; passing an LlmPlanner
    delegates to the chat endpoint instead.
    """
    if planner is not None:
        plan = planner.plan(command)
        plan.validate()
        return plan
    plan = GrammarPlanner().plan(command)
    plan.validate()
    return plan


class Planner:
    def plan(self, command: str) -> QueryPlan:
        raise NotImplementedError


class GrammarPlanner(Planner):
    """Deterministic grammar over the documented sentence forms:

    * "find (a|the|all) X"
    * "find (all) objects <relation> the Y"
    * "find the X <relation> the Y"
    * "find the X with a Y <relation> it"
    * "find the X farthest from / closest to the Y"
    """

    def plan(self, command: str) -> QueryPlan:
        if not command or not command.strip():
            raise UnparsableCommand("empty command", raw=command)
        text = command.strip().rstrip(".!?").strip()
        text = _COURTESY.sub("", text)
        text = re.sub(r"\s+", " ", text)
        m = re.match(r"^(?:find|locate)\s+", text, re.IGNORECASE)
        if not m:
            raise UnparsableCommand(f"commands must start with find/locate: {command!r}", raw=command)
        text = text[m.end():]

        # farthest/closest comparisons
        m = re.match(
            rf"^(?:{_ARTICLE})?(?P<target>.+?)\s+(?P<cmp>farthest|furthest|closest|nearest)\s+"
            rf"(?:from|to)\s+(?:{_ARTICLE})?(?P<ref>.+)$",
            text,
            re.IGNORECASE,
        )
        if m:
            relation = "far" if m.group("cmp").lower() in ("farthest", "furthest") else "close"
            ref_plan = QueryPlan(steps=[Target(m.group("ref").strip())])
            target_plan = QueryPlan(steps=[Target(m.group("target").strip())])
            return QueryPlan(steps=[CompareDis(relation, ref_plan, target_plan)])

        # "X with a Y <relation> it": the relation is stated from the
        # reference's point of view, so it inverts when walking ref -> target
        m = re.match(
            rf"^(?:{_ARTICLE})?(?P<target>.+?)\s+with\s+(?:{_ARTICLE})?(?P<ref>.+?)\s+"
            rf"(?P<rel>{'|'.join(re.escape(r) for r in _relation_alternatives())})\s+it$",
            text,
            re.IGNORECASE,
        )
        if m:
            from .graph import INVERSE_RELATION

            surface = m.group("rel").lower()
            relation = INVERSE_RELATION[SURFACE_RELATIONS[surface]]
            ref, target = m.group("ref").strip(), m.group("target").strip()
            primary = QueryPlan(steps=[RefRelationTarget(ref, relation, target)])
            if surface in _AMBIGUOUS_SIDE:
                primary.fallback = QueryPlan(
                    steps=[RefRelationTarget(ref, INVERSE_RELATION[relation], target)]
                )
            return primary

        # "objects <relation> Y" or "X <relation> Y"
        for surface in _relation_alternatives():
            m = re.match(
                rf"^(?:{_ARTICLE})?(?P<target>.+?)\s+{re.escape(surface)}\s+(?:{_ARTICLE})?(?P<ref>.+)$",
                text,
                re.IGNORECASE,
            )
            if not m:
                continue
            relation = SURFACE_RELATIONS[surface]
            target = m.group("target").strip()
            ref = m.group("ref").strip()
            if target.lower() in ("objects", "object", "everything", "things", "items"):
                primary = QueryPlan(steps=[RefRelation(ref, relation)])
                alt: ApiCall | None = RefRelation(ref, "right") if surface in _AMBIGUOUS_SIDE else None
            else:
                primary = QueryPlan(steps=[RefRelationTarget(ref, relation, target)])
                alt = RefRelationTarget(ref, "right", target) if surface in _AMBIGUOUS_SIDE else None
            if alt is not None:
                primary.fallback = QueryPlan(steps=[alt])
            return primary

        # bare target
        target = _strip_article(text)
        if not target:
            raise UnparsableCommand(f"no target in {command!r}", raw=command)
        return QueryPlan(steps=[Target(target)])


# -- LLM planner ---------------------------------------------------------------

LLM_SYSTEM_PROMPT = """\
You are an object-retrieval agent working over a 3D scene graph. Each graph
node is an object with semantics and a location; each edge stores a spatial
relation between two objects (one of: above, below, front, back, left, right,
contain, included, far, close) plus their distance and displacement.

Read the user's request, identify the reference object, the target object,
and their spatial relation, map the relation onto the vocabulary above, and
answer ONLY with the API calls needed, one per line, chosen from:

1. graph.query_for_target('target')
   Use when the request names just one object.
   Example request: "Please help me find a vase."
   Answer: graph.query_for_target('vase')

2. graph.query_for_reference_relation('reference', 'relation')
   Use when the request asks for all objects related to a reference.
   Example request: "Find all objects on the table."
   Answer: graph.query_for_reference_relation('table', 'above')

3. graph.query_for_reference_relation_target('reference', 'relation', 'target')
   Use when the request names a target, a reference, and their relation.
   Example request: "Find the TV above the table."
   Answer: graph.query_for_reference_relation_target('table', 'above', 'TV')
   Example request: "Find the TV with a table underneath it."
   Answer: graph.query_for_reference_relation_target('table', 'above', 'TV')
   (Restate the relation from the reference's side when needed.)

4. graph.query_for_compare_dis('far'|'close', ref_obj, tar_objs)
   Use for farthest/closest requests. First bind ref_obj and tar_objs with
   query_for_target calls, then compare.
   Example request: "Find the trash can farthest from the door."
   Answer:
   ref_obj = graph.query_for_target('door')
   tar_objs = graph.query_for_target('trash can')
   graph.query_for_compare_dis('far', ref_obj, tar_objs)

Write nothing except the API call lines.
"""

_CALL_RE = re.compile(
    r"^(?:(?P<bind>\w+)\s*=\s*)?graph\.(?P<func>\w+)\((?P<args>.*)\)\s*,?\s*$"
)
_ARG_RE = re.compile(r"'([^']*)'|\"([^\"]*)\"|([A-Za-z_]\w*)")


def _parse_args(raw: str) -> list[tuple[str, str]]:
    """Split an argument list into (kind, value): kind is 'str' or 'name'."""
    args: list[tuple[str, str]] = []
    for match in _ARG_RE.finditer(raw):
        if match.group(1) is not None:
            args.append(("str", match.group(1)))
        elif match.group(2) is not None:
            args.append(("str", match.group(2)))
        else:
            args.append(("name", match.group(3)))
    return args


def parse_llm_calls(text: str) -> QueryPlan:
    """Parse chat output: one API call per line, optionally binding names."""
    bindings: dict[str, QueryPlan] = {}
    steps: list[ApiCall] = []
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise LlmProtocolError("empty response", raw=text)
    final: QueryPlan | None = None
    for line in lines:
        m = _CALL_RE.match(line)
        if not m:
            raise LlmProtocolError(f"not an API call: {line!r}", raw=text)
        func = m.group("func")
        args = _parse_args(m.group("args"))

        def strargs(n: int) -> list[str]:
            if len(args) != n or any(kind != "str" for kind, _ in args):
                raise LlmProtocolError(f"{func} expects {n} string args: {line!r}", raw=text)
            return [value for _, value in args]

        if func == "query_for_target":
            step: ApiCall = Target(strargs(1)[0])
        elif func == "query_for_reference_relation":
            ref, rel = strargs(2)
            step = RefRelation(ref, rel)
        elif func == "query_for_reference_relation_target":
            ref, rel, tgt = strargs(3)
            step = RefRelationTarget(ref, rel, tgt)
        elif func == "query_for_compare_dis":
            if (
                len(args) != 3
                or args[0][0] != "str"
                or args[1][0] != "name"
                or args[2][0] != "name"
            ):
                raise LlmProtocolError(f"bad compare call: {line!r}", raw=text)
            rel = args[0][1]
            ref_name, tgt_name = args[1][1], args[2][1]
            if ref_name not in bindings or tgt_name not in bindings:
                raise LlmProtocolError(f"unbound operand in {line!r}", raw=text)
            step = CompareDis(rel, bindings[ref_name], bindings[tgt_name])
        else:
            raise LlmProtocolError(f"unknown API {func!r}", raw=text)

        bind = m.group("bind")
        if bind:
            bindings[bind] = QueryPlan(steps=[step])
        else:
            steps.append(step)
            final = QueryPlan(steps=steps)
    if final is None:
        raise LlmProtocolError("response binds names but never issues a query", raw=text)
    try:
        final.validate()
    except NoSuchRelation as exc:
        raise LlmProtocolError(str(exc), raw=text) from exc
    return final


class LlmPlanner(Planner):
    def __init__(self, client: ChatClient):
        self.client = client

    def plan(self, command: str) -> QueryPlan:
        return parse_llm_calls(self.client.complete(LLM_SYSTEM_PROMPT, command))


# -- plan execution ------------------------------------------------------------

def execute_plan(
    plan: QueryPlan, graph: SceneGraph, embedder: TextEmbedder, top_k: int = 5, ref_top_k: int = 1
) -> RetrievalResult:
    """Run a plan; on an empty primary result, run its fallback."""
    result: RetrievalResult | None = None
    for step in plan.steps:
        if isinstance(step, Target):
            result = query_for_target(graph, step.text, embedder, top_k=top_k)
        elif isinstance(step, RefRelation):
            result = query_for_reference_relation(graph, step.ref_text, step.relation, embedder, ref_top_k)
        elif isinstance(step, RefRelationTarget):
            result = query_for_reference_relation_target(
                graph, step.ref_text, step.relation, step.target_text, embedder, ref_top_k
            )
        elif isinstance(step, CompareDis):
            ref = execute_plan(step.ref, graph, embedder, top_k=top_k, ref_top_k=ref_top_k)
            targets = execute_plan(step.targets, graph, embedder, top_k=top_k, ref_top_k=ref_top_k)
            result = query_for_compare_dis(step.relation, ref, targets, graph)
        else:
            raise NoSuchRelation(f"unknown plan step {step!r}")
    if result is None:
        raise EmptyOperand("plan had no steps")
    if not result.items and plan.fallback is not None:
        return execute_plan(plan.fallback, graph, embedder, top_k=top_k, ref_top_k=ref_top_k)
    return result


def retrieve(
    command: str,
    graph: SceneGraph,
    embedder: TextEmbedder,
    planner: Planner | None = None,
    top_k: int = 5,
    ref_top_k: int = 1,
) -> RetrievalResult:
    """Plan then execute a natural-language command."""
    plan = plan_query(command, planner)
    return execute_plan(plan, graph, embedder, top_k=top_k, ref_top_k=ref_top_k)
