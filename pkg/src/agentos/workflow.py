"""Event-driven workflow execution.

A validated workflow form compiles to a DAG of events. Execution proceeds
in rounds: every round dispatches the full ready set (events whose listen
sources have all completed), then commits outcomes in a fixed (rank, document
order) sequence. Serial and parallel modes share that commit order, so the
final blackboard and the trace are identical byte for byte; parallel mode
only overlaps the agent calls inside a round.

Trace lines never carry timestamps. Every line is derived from committed
state, which is what makes replayed runs comparable.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from . import kernel
from .errors import (
    E_LOOP_LIMIT,
    E_MISSING_OUTPUT,
    E_NO_OUTPUT,
    E_OUTPUT_UNDECLARED,
    E_UNKNOWN_TOOL,
    InvalidFormError,
    NotFoundError,
)
from .forms import (
    ActionSpec,
    EventAgentRef,
    EventSpec,
    RegistryView,
    WorkflowForm,
    globals_map,
    substitute_globals,
    validate_workflow_form,
)

PENDING = "pending"
COMPLETED = "completed"

DEFAULT_GOTO_LIMIT = 3
GOTO_LIMIT_VARIABLE = "max_iterations"

SELECT_MARKER = "SELECTED_OUTPUT:"
_SELECT_INSTRUCTION = (
    'End your reply with a line "SELECTED_OUTPUT: <key>" naming one declared output key.'
)


class NullToolSuite:
    """Tool provider with nothing in it; unknown everywhere."""

    def schema(self, name: str):
        raise NotFoundError(f"unknown tool: {name}")

    def run(self, call) -> kernel.ToolResult:
        return kernel.ToolResult.fail(E_UNKNOWN_TOOL, f"unknown tool: {call.tool_name}")


# ---------------------------------------------------------------------------
# compilation
# ---------------------------------------------------------------------------

@dataclass
class CompiledEvent:
    spec: EventSpec
    doc_order: int
    rank: int  # longest listen-path depth; 0 for events with no sources


@dataclass
class WorkflowGraph:
    form: WorkflowForm
    events: list[CompiledEvent]
    by_name: dict[str, CompiledEvent]


def compile_graph(form: WorkflowForm, registry: RegistryView | None = None) -> WorkflowGraph:
    """Validate and rank the event graph; raises InvalidFormError on any diagnostic."""
    diagnostics = validate_workflow_form(form, registry)
    if diagnostics:
        raise InvalidFormError(diagnostics)

    ranks: dict[str, int] = {}
    specs = {e.name: e for e in form.events}

    def rank_of(name: str) -> int:
        if name in ranks:
            return ranks[name]
        spec = specs[name]
        value = 0 if not spec.listen else 1 + max(rank_of(s) for s in spec.listen)
        ranks[name] = value
        return value

    events = [CompiledEvent(spec, i, rank_of(spec.name))
              for i, spec in enumerate(form.events)]
    return WorkflowGraph(form=form, events=events,
                         by_name={ce.spec.name: ce for ce in events})


def forward_closure(graph: WorkflowGraph, target: str) -> set[str]:
    """``target`` plus every event that transitively listens to it."""
    listeners: dict[str, list[str]] = {name: [] for name in graph.by_name}
    for ce in graph.events:
        for source in ce.spec.listen:
            listeners.setdefault(source, []).append(ce.spec.name)
    closure = {target}
    stack = [target]
    while stack:
        for follower in listeners.get(stack.pop(), ()):
            if follower not in closure:
                closure.add(follower)
                stack.append(follower)
    return closure


# ---------------------------------------------------------------------------
# run state
# ---------------------------------------------------------------------------

@dataclass
class EventOutcome:
    event: str
    key: str = ""
    value: str = ""
    action: ActionSpec = field(default_factory=lambda: ActionSpec("RESULT"))
    notes: list[str] = field(default_factory=list)
    failure: str | None = None  # error code when no usable output was produced
    failure_detail: str = ""


@dataclass
class WorkflowResult:
    status: str  # "completed" | "aborted" | "error"
    output: str | None = None
    output_key: str | None = None
    blackboard: dict[str, str] = field(default_factory=dict)
    trace: list[str] = field(default_factory=list)
    error: str | None = None
    reason: str = ""


class WorkflowRun:
    """Mutable state of one execution."""

    def __init__(self, graph: WorkflowGraph, system_value: str):
        self.graph = graph
        self.system_value = system_value
        self.blackboard: dict[str, str] = {}
        self.state: dict[str, str] = {ce.spec.name: PENDING for ce in graph.events}
        self.published: dict[str, set[str]] = {ce.spec.name: set() for ce in graph.events}
        self.goto_counts: dict[tuple[str, str], int] = {}
        self.trace: list[str] = []
        self.globals = globals_map(graph.form.global_variables)
        self.goto_limit = _goto_limit(self.globals)
        key = graph.form.system_input.key
        if key:
            self.blackboard[key] = system_value


def _goto_limit(variables: dict[str, str]) -> int:
    raw = variables.get(GOTO_LIMIT_VARIABLE, "")
    try:
        value = int(raw)
    except ValueError:
        return DEFAULT_GOTO_LIMIT
    return value if value > 0 else DEFAULT_GOTO_LIMIT


def ready_set(run: WorkflowRun) -> list[CompiledEvent]:
    """Pending events whose listen sources have all completed, in commit order."""
    out = []
    for ce in run.graph.events:
        if run.state[ce.spec.name] != PENDING:
            continue
        if all(run.state.get(s) == COMPLETED for s in ce.spec.listen):
            out.append(ce)
    out.sort(key=lambda ce: (ce.rank, ce.doc_order))
    return out


# ---------------------------------------------------------------------------
# event execution
# ---------------------------------------------------------------------------

def render_event_prompt(spec: EventSpec, inputs: list[tuple[str, str]],
                        variables: dict[str, str]) -> str:
    task = spec.task if spec.task else "Complete this step and produce one declared output."
    task = substitute_globals(task, variables)
    lines = [f"Task: {task}", "", "Inputs:"]
    for key, value in inputs:
        lines.append(f"- {key}: {value}")
    lines.extend(["", "Declared outputs:"])
    for output in spec.outputs:
        line = f"- {output.key}: {output.description}"
        if output.condition:
            line += f" (condition: {output.condition})"
        lines.append(line)
    lines.extend(["", _SELECT_INSTRUCTION])
    return "\n".join(lines)


def select_output(text: str, spec: EventSpec) -> tuple[str, str] | str:
    """Map final agent text to (key, value), or an error code string.

    The marker line is consumed; the rest of the text is the value. With a
    single declared output the marker is optional.
    """
    marker: str | None = None
    kept: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith(SELECT_MARKER):
            marker = stripped[len(SELECT_MARKER):].strip()
        else:
            kept.append(line)
    declared = [o.key for o in spec.outputs]
    if marker is not None:
        if marker not in declared:
            return E_OUTPUT_UNDECLARED
        return marker, "\n".join(kept).strip()
    if len(declared) == 1:
        return declared[0], text.strip()
    return E_NO_OUTPUT


AgentResolver = Callable[[EventAgentRef], kernel.AgentDefinition]


def make_form_resolver(form: WorkflowForm, tools=None) -> AgentResolver:
    """Resolve event agents from the form's own declarations.

    Declared tools are kept only when the tool suite can describe them, so a
    form whose new tools were never built still executes.
    """
    decls = {d.name: d for d in form.agents}
    variables = globals_map(form.global_variables)

    def resolve(ref: EventAgentRef) -> kernel.AgentDefinition:
        decl = decls.get(ref.name)
        description = decl.description if decl else ""
        instructions = substitute_globals(description, variables) if description else (
            f"You are {ref.name}. Follow the task exactly.")
        tool_names = []
        if decl and tools is not None:
            for tool in decl.tools:
                try:
                    tools.schema(tool.name)
                except NotFoundError:
                    continue
                tool_names.append(tool.name)
        return kernel.AgentDefinition(
            name=ref.name, description=description, instructions=instructions,
            tool_names=tool_names, model=ref.model)

    return resolve


def execute_event(run: WorkflowRun, compiled: CompiledEvent, engine, tools,
                  resolve_agent: AgentResolver,
                  limits: kernel.LoopLimits | None = None) -> EventOutcome:
    """Run one event to an outcome. Mechanical for on_start, agentic otherwise.

    A reply that names no usable output is retried once with a corrective
    user turn; a second failure surfaces as outcome.failure.
    """
    spec = compiled.spec
    if spec.name == "on_start":
        return EventOutcome(event=spec.name, key=spec.outputs[0].key,
                            value=run.system_value, action=ActionSpec("RESULT"))

    inputs = [(p.key, run.blackboard.get(p.key, "")) for p in spec.inputs]
    prompt = render_event_prompt(spec, inputs, run.globals)
    agent = resolve_agent(spec.agent) if spec.agent else kernel.AgentDefinition(
        name=spec.name, instructions="Follow the task exactly.")
    notes: list[str] = []
    context = kernel.Context()
    task = prompt
    last_code = E_NO_OUTPUT
    last_detail = ""

    for attempt in range(2):
        outcome = kernel.run_agent_loop(agent, task, context, engine, tools, limits)
        if outcome.kind != "completed":
            last_code = E_NO_OUTPUT
            last_detail = f"agent run ended with {outcome.kind}: {outcome.reason}"
        else:
            selected = select_output(outcome.text, spec)
            if isinstance(selected, tuple):
                key, value = selected
                return EventOutcome(event=spec.name, key=key, value=value,
                                    action=_action_for(spec, key), notes=notes)
            last_code = selected
            last_detail = "reply did not select a declared output"
        if attempt == 0:
            notes.append(f"retry {spec.name} code={last_code}")
            declared = ", ".join(o.key for o in spec.outputs)
            task = (f"Your previous reply was not usable ({last_code}). "
                    f"Declared output keys: {declared}. "
                    f"Reply again and end with a line 'SELECTED_OUTPUT: <key>'.")
    return EventOutcome(event=spec.name, notes=notes,
                        failure=last_code, failure_detail=last_detail)


def _action_for(spec: EventSpec, key: str) -> ActionSpec:
    for output in spec.outputs:
        if output.key == key:
            return output.action
    return ActionSpec("RESULT")


# ---------------------------------------------------------------------------
# commit
# ---------------------------------------------------------------------------

@dataclass
class _Verdict:
    kind: str  # "continue" | "aborted" | "error"
    code: str | None = None
    reason: str = ""


def apply_outcome(run: WorkflowRun, compiled: CompiledEvent,
                  outcome: EventOutcome) -> _Verdict:
    name = compiled.spec.name
    for note in outcome.notes:
        run.trace.append(note)
    if outcome.failure:
        run.trace.append(f"fail {name} code={outcome.failure}")
        return _Verdict("error", outcome.failure,
                        f"{name}: {outcome.failure_detail}")

    action = outcome.action
    run.trace.append(f"commit {name} action={action.type} key={outcome.key}")
    if action.type == "ABORT":
        run.state[name] = COMPLETED
        return _Verdict("aborted", None, outcome.value or f"{name} requested abort")

    run.blackboard[outcome.key] = outcome.value
    run.published[name].add(outcome.key)
    run.state[name] = COMPLETED

    if action.type == "GOTO":
        target = action.value or ""
        count = run.goto_counts.get((name, target), 0) + 1
        run.goto_counts[(name, target)] = count
        run.trace.append(f"goto {name} -> {target} count={count} limit={run.goto_limit}")
        if count > run.goto_limit:
            return _Verdict("aborted", E_LOOP_LIMIT,
                            f"goto {name} -> {target} exceeded limit {run.goto_limit}")
        closure = forward_closure(run.graph, target)
        members = sorted(closure, key=lambda n: (run.graph.by_name[n].rank,
                                                 run.graph.by_name[n].doc_order))
        for member in members:
            for key in run.published[member]:
                run.blackboard.pop(key, None)
            run.published[member].clear()
            run.state[member] = PENDING
            run.trace.append(f"reset {member}")
    return _Verdict("continue")


# ---------------------------------------------------------------------------
# the driver
# ---------------------------------------------------------------------------

def run_workflow(form: WorkflowForm, input_value: str, engine, *,
                 registry: RegistryView | None = None,
                 tools=None,
                 resolve_agent: AgentResolver | None = None,
                 parallel: bool = False,
                 limits: kernel.LoopLimits | None = None) -> WorkflowResult:
    """Execute a workflow form end to end.

    Completion requires every event completed and the system output key
    present on the blackboard; a missing key is reported as E_MISSING_OUTPUT
    rather than silently returning partial state.
    """
    graph = compile_graph(form, registry)
    suite = tools if tools is not None else NullToolSuite()
    resolver = resolve_agent or make_form_resolver(form, suite)
    run = WorkflowRun(graph, input_value)

    round_no = 0
    while True:
        batch = ready_set(run)
        if not batch:
            if all(state == COMPLETED for state in run.state.values()):
                key = graph.form.system_output.key
                if key in run.blackboard:
                    run.trace.append(f"complete output={key}")
                    return WorkflowResult(
                        status="completed", output=run.blackboard[key], output_key=key,
                        blackboard=dict(run.blackboard), trace=run.trace)
                run.trace.append(f"fail workflow code={E_MISSING_OUTPUT}")
                return WorkflowResult(
                    status="error", error=E_MISSING_OUTPUT,
                    reason=f"system output key {key!r} was never published",
                    blackboard=dict(run.blackboard), trace=run.trace)
            run.trace.append("fail workflow code=E_STALLED")
            return WorkflowResult(
                status="error", error="E_STALLED",
                reason="no event is ready and the workflow is not complete",
                blackboard=dict(run.blackboard), trace=run.trace)

        round_no += 1
        run.trace.append(f"round {round_no}")
        for ce in batch:
            ref = ce.spec.agent
            run.trace.append("run {} agent={} model={}".format(
                ce.spec.name,
                ref.name if ref else "-",
                (ref.model if ref and ref.model else "-")))

        if parallel and len(batch) > 1:
            with ThreadPoolExecutor(max_workers=len(batch)) as pool:
                outcomes = list(pool.map(
                    lambda ce: execute_event(run, ce, engine, suite, resolver, limits),
                    batch))
        else:
            outcomes = [execute_event(run, ce, engine, suite, resolver, limits)
                        for ce in batch]

        reset_this_round: set[str] = set()
        stop: WorkflowResult | None = None
        for ce, outcome in zip(batch, outcomes):
            if ce.spec.name in reset_this_round:
                # an earlier commit in this round rewound this event; its
                # result is stale and must not land
                run.trace.append(f"discard {ce.spec.name}")
                continue
            before = {n for n, s in run.state.items() if s == PENDING}
            verdict = apply_outcome(run, ce, outcome)
            after = {n for n, s in run.state.items() if s == PENDING}
            reset_this_round.update(after - before)
            if verdict.kind == "aborted":
                run.trace.append("abort workflow" +
                                 (f" code={verdict.code}" if verdict.code else ""))
                stop = WorkflowResult(status="aborted", error=verdict.code,
                                      reason=verdict.reason,
                                      blackboard=dict(run.blackboard), trace=run.trace)
                break
            if verdict.kind == "error":
                stop = WorkflowResult(status="error", error=verdict.code,
                                      reason=verdict.reason,
                                      blackboard=dict(run.blackboard), trace=run.trace)
                break
        if stop is not None:
            return stop
