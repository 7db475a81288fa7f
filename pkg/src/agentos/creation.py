"""Self-creation pipelines: requirement text in, registered capabilities out.

Two drivers share one shape. Each runs a sequence of phases; each phase gets
up to ``max_attempts`` tries. An attempt asks an editor agent (or, for
profiling, a plain completion) to do the work, then the pipeline checks the
result mechanically: documents must parse and validate, created entries must
actually be in the registry, and every new tool must pass the editor's own
demonstration call. Failed attempts roll the registry back to the phase-start
snapshot byte for byte, and an exhausted phase raises PhaseExhaustedError
with the same rollback applied. Validation diagnostics are fed back to the
next attempt verbatim, which is what makes the loop self-correcting.

Editor agents never touch the filesystem directly; all mutation goes through
the management tool suite defined here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from . import kernel, workflow as workflow_mod
from .engine import ToolParam, ToolSchema, parse_transformed_call
from .errors import (
    E_ARGS,
    E_RUNNER_REFUSED,
    E_UNKNOWN_TOOL,
    ActionTypeError,
    AgentOsError,
    ParseError,
    PhaseExhaustedError,
    SchemaError,
    TooFewAgentsError,
    XmlError,
)
from .forms import (
    AgentForm,
    Diagnostic,
    WorkflowForm,
    parse_agent_form,
    parse_workflow_form,
    validate_agent_form,
    validate_workflow_form,
    workflow_form_to_xml,
)
from .kernel import AgentDefinition, Context, ToolCall, ToolResult
from .registry import RegistryStore, RegistryToolSuite, ToolDefinition, ToolParamSpec

TEST_LINE_PREFIX = "TEST:"


# ---------------------------------------------------------------------------
# feedback rendering
# ---------------------------------------------------------------------------

def diagnostics_to_feedback(diagnostics: list[Diagnostic]) -> str:
    lines = ["The document was rejected. Fix every issue and output the "
             "corrected XML document only:"]
    for d in diagnostics:
        lines.append(f"- {d.code} at {d.location}: {d.message}")
    return "\n".join(lines)


def extract_xml(text: str, root_tag: str) -> str | None:
    """Pull the first <root_tag>...</root_tag> document out of prose."""
    open_a = f"<{root_tag}>"
    open_b = f"<{root_tag} "
    start = text.find(open_a)
    if start < 0:
        start = text.find(open_b)
    if start < 0:
        return None
    close = f"</{root_tag}>"
    end = text.find(close, start)
    if end < 0:
        return None
    return text[start:end + len(close)]


# ---------------------------------------------------------------------------
# management tool suite
# ---------------------------------------------------------------------------

_MGMT_SCHEMAS: dict[str, ToolSchema] = {}


def _mgmt(name: str, description: str, params: list[ToolParam]) -> None:
    _MGMT_SCHEMAS[name] = ToolSchema(name=name, description=description,
                                     parameters=params)


_mgmt("list_tools", "List registered tool names, one per line.", [])
_mgmt("create_tool", "Register a tool.", [
    ToolParam("name", "Tool name (identifier)."),
    ToolParam("description", "What the tool does.", required=False),
    ToolParam("parameters",
              'JSON array of parameter names or {"name","description","required"} '
              "objects, or a comma-separated name list.", required=False),
    ToolParam("source",
              "Python source; reads a JSON object of arguments from stdin and "
              "prints the result.", required=False),
    ToolParam("builtin", "Builtin body to reuse instead of a source.",
              required=False),
])
_mgmt("run_tool", "Execute a registered tool.", [
    ToolParam("name", "Tool name."),
    ToolParam("arguments", "JSON object of string arguments.", required=False),
])
_mgmt("delete_tool", "Remove a tool.", [ToolParam("name", "Tool name.")])
_mgmt("list_agents", "List registered agent names, one per line.", [])
_mgmt("create_agent", "Register an agent.", [
    ToolParam("name", "Agent name."),
    ToolParam("description", "One-line summary.", required=False),
    ToolParam("instructions", "System prompt for the agent.", required=False),
    ToolParam("tools", "Comma-separated tool names.", required=False),
    ToolParam("transfer_targets", "Comma-separated agent names.", required=False),
    ToolParam("model", "Model identifier.", required=False),
])
_mgmt("delete_agent", "Remove an agent.", [ToolParam("name", "Agent name.")])
_mgmt("list_workflows", "List registered workflow names, one per line.", [])
_mgmt("create_workflow", "Register a workflow from its XML document.", [
    ToolParam("xml", "The <workflow> XML document."),
])
_mgmt("run_workflow", "Execute a registered workflow.", [
    ToolParam("name", "Workflow name."),
    ToolParam("input", "Value for the workflow's system input."),
])
_mgmt("delete_workflow", "Remove a workflow.", [ToolParam("name", "Workflow name.")])


def _split_csv(raw: str) -> list[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]


def _parse_param_spec(raw: str) -> list[ToolParamSpec]:
    if not raw.strip():
        return []
    try:
        data = json.loads(raw)
    except json.JSONDecodeError:
        data = _split_csv(raw)
    if not isinstance(data, list):
        raise ValueError("parameters must be a list")
    out: list[ToolParamSpec] = []
    for item in data:
        if isinstance(item, str):
            out.append(ToolParamSpec(item))
        elif isinstance(item, dict) and "name" in item:
            out.append(ToolParamSpec(str(item["name"]),
                                     str(item.get("description", "")),
                                     bool(item.get("required", True))))
        else:
            raise ValueError(f"bad parameter entry: {item!r}")
    return out


class ManagementToolSuite:
    """Registry mutation tools for editor agents.

    run_workflow needs a completion engine; without one it refuses rather
    than failing half way through an execution.
    """

    def __init__(self, store: RegistryStore, engine=None, exec_tools=None,
                 workdir=None, runner=None):
        self.store = store
        self.engine = engine
        self.exec_tools = exec_tools if exec_tools is not None else RegistryToolSuite(
            store, runner=runner, workdir=workdir)

    def schema(self, name: str) -> ToolSchema:
        try:
            return _MGMT_SCHEMAS[name]
        except KeyError:
            from .errors import NotFoundError

            raise NotFoundError(f"unknown tool: {name}")

    def run(self, call: ToolCall) -> ToolResult:
        handler = getattr(self, f"_do_{call.tool_name}", None)
        if handler is None or call.tool_name not in _MGMT_SCHEMAS:
            return ToolResult.fail(E_UNKNOWN_TOOL, f"unknown tool: {call.tool_name}")
        schema = _MGMT_SCHEMAS[call.tool_name]
        declared = {p.name for p in schema.parameters}
        for key in call.arguments:
            if key not in declared:
                return ToolResult.fail(E_ARGS, f"unexpected argument: {key}")
        for p in schema.parameters:
            if p.required and p.name not in call.arguments:
                return ToolResult.fail(E_ARGS, f"missing required argument: {p.name}")
        try:
            return handler(dict(call.arguments))
        except AgentOsError as err:
            return ToolResult.fail(err.code, str(err))
        except ValueError as err:
            return ToolResult.fail(E_ARGS, str(err))

    # -- handlers -----------------------------------------------------------

    @staticmethod
    def _listing(names: list[str]) -> ToolResult:
        return ToolResult.ok("\n".join(names) if names else "(none)")

    def _do_list_tools(self, args) -> ToolResult:
        return self._listing(self.store.list_tools())

    def _do_create_tool(self, args) -> ToolResult:
        params = _parse_param_spec(args.get("parameters", ""))
        builtin = args.get("builtin", "").strip()
        source = args.get("source", "")
        if builtin:
            tool = ToolDefinition(name=args["name"],
                                  description=args.get("description", ""),
                                  parameters=params, body_kind="builtin",
                                  builtin=builtin)
        elif source.strip():
            tool = ToolDefinition(name=args["name"],
                                  description=args.get("description", ""),
                                  parameters=params, body_kind="script",
                                  source=source)
        else:
            return ToolResult.fail(E_ARGS, "provide either source or builtin")
        version = self.store.put_tool(tool)
        return ToolResult.ok(f"created tool {tool.name} v{version}")

    def _do_run_tool(self, args) -> ToolResult:
        raw = args.get("arguments", "")
        arguments: dict[str, str] = {}
        if raw.strip():
            data = json.loads(raw)
            if not isinstance(data, dict):
                return ToolResult.fail(E_ARGS, "arguments must be a JSON object")
            arguments = {str(k): v if isinstance(v, str) else json.dumps(v)
                         for k, v in data.items()}
        return self.exec_tools.run(ToolCall(args["name"], arguments))

    def _do_delete_tool(self, args) -> ToolResult:
        self.store.delete_tool(args["name"])
        return ToolResult.ok(f"deleted tool {args['name']}")

    def _do_list_agents(self, args) -> ToolResult:
        return self._listing(self.store.list_agents())

    def _do_create_agent(self, args) -> ToolResult:
        agent = AgentDefinition(
            name=args["name"],
            description=args.get("description", ""),
            instructions=args.get("instructions", ""),
            tool_names=_split_csv(args.get("tools", "")),
            transfer_targets=_split_csv(args.get("transfer_targets", "")),
            model=args.get("model", ""),
        )
        version = self.store.put_agent(agent)
        return ToolResult.ok(f"created agent {agent.name} v{version}")

    def _do_delete_agent(self, args) -> ToolResult:
        self.store.delete_agent(args["name"])
        return ToolResult.ok(f"deleted agent {args['name']}")

    def _do_list_workflows(self, args) -> ToolResult:
        return self._listing(self.store.list_workflows())

    def _do_create_workflow(self, args) -> ToolResult:
        try:
            form = parse_workflow_form(args["xml"])
        except (XmlError, SchemaError, ActionTypeError) as err:
            return ToolResult.fail(err.code, str(err))
        self.store.put_workflow(form)
        return ToolResult.ok(f"registered workflow {form.name}")

    def _do_run_workflow(self, args) -> ToolResult:
        if self.engine is None:
            return ToolResult.fail(E_RUNNER_REFUSED,
                                   "no engine configured for workflow runs")
        form = self.store.get_workflow(args["name"])
        from .registry import make_registry_resolver

        # the stored workflow's own registry entry is not a name collision
        view = self.store.view()
        view = replace(view, workflow_names=view.workflow_names - {form.name})
        result = workflow_mod.run_workflow(
            form, args["input"], self.engine,
            registry=view, tools=self.exec_tools,
            resolve_agent=make_registry_resolver(self.store, form, self.exec_tools))
        if result.status == "completed":
            return ToolResult.ok(result.output or "")
        return ToolResult.fail(result.error or "E_ABORTED",
                               f"workflow {result.status}: {result.reason}")

    def _do_delete_workflow(self, args) -> ToolResult:
        self.store.delete_workflow(args["name"])
        return ToolResult.ok(f"deleted workflow {args['name']}")


# ---------------------------------------------------------------------------
# editor agents
# ---------------------------------------------------------------------------

TOOL_EDITOR_INSTRUCTIONS = """\
You maintain the tool registry. Create each requested tool with create_tool.
Prefer builtin bodies when one fits; otherwise write a python source that
reads a JSON object of string arguments from stdin and prints its result.
After creating everything, finish with a plain text reply containing one
demonstration line per created tool, formatted exactly as:
TEST: <function=TOOL_NAME><parameter=arg>value</parameter></function>
Pick argument values whose execution clearly succeeds."""

AGENT_EDITOR_INSTRUCTIONS = """\
You maintain the agent registry. Create each requested agent with
create_agent, copying the provided name, description, instructions, and tool
list exactly. When every agent is created, reply with a short plain text
summary."""

WORKFLOW_EDITOR_INSTRUCTIONS = """\
You maintain the workflow registry. Register the provided workflow document
with create_workflow, passing the XML through unchanged. If registration
fails, read the error and retry with a corrected document. Finish with a
short plain text summary."""

PROFILER_INSTRUCTIONS = """\
You design agent teams. Given a requirement, output one XML document with
root <agents> and nothing else:

<agents>
    <system_input>what the user provides, as prose</system_input>
    <system_output><key>identifier</key><description>...</description></system_output>
    <global_variables>  (optional)
        <variable><key>k</key><description>...</description><value>...</value></variable>
    </global_variables>
    <agent>
        <name>...</name>
        <description>...</description>
        <instructions>...</instructions>
        <tools category="existing"><tool><name>...</name><description>...</description></tool></tools>
        <tools category="new"><tool><name>...</name><description>...</description></tool></tools>
        <agent_input><key>identifier</key><description>...</description></agent_input>
        <agent_output><key>identifier</key><description>...</description></agent_output>
    </agent>
</agents>

Each input/output takes exactly one key/description pair. Instructions may
reference global variables as {key}. Tools under category="existing" must
already be registered; tools under category="new" will be built. For a
single-agent team the agent_output key must equal the system_output key."""

WORKFLOW_PROFILER_INSTRUCTIONS = """\
You design event-driven workflows. Given a requirement, output one XML
document with root <workflow> and nothing else:

<workflow>
    <name>single_token_name</name>
    <system_input><key>identifier</key><description>...</description></system_input>
    <system_output><key>identifier</key><description>...</description></system_output>
    <agents>
        <agent category="existing|new"><name>...</name><description>...</description></agent>
    </agents>
    <global_variables>  (optional; a variable named max_iterations caps GOTO loops)
        <variable><key>k</key><description>...</description><value>...</value></variable>
    </global_variables>
    <events>
        <event>
            <name>identifier</name>
            <inputs><input><key>...</key><description>...</description></input></inputs>
            <task>what to do; may reference {global_variables}</task>
            <outputs>
                <output>
                    <key>...</key>
                    <description>...</description>
                    <condition>required when an event has several outputs</condition>
                    <action><type>RESULT|ABORT|GOTO</type><value>target event for GOTO</value></action>
                </output>
            </outputs>
            <listen><event>source_event</event></listen>
            <agent><name>...</name><model>...</model></agent>
        </event>
    </events>
</workflow>

Rules: the first event is on_start; it has no task, no agent, no listen, and
simply republishes the system input key with a RESULT action. Every other
event listens to at least one event and names an agent. An event's input
keys must be published by its listen ancestors (or be the system input). A
GOTO target must exist and must not listen to the GOTO's source event. With
several outputs, each needs a condition and at most one may be a RESULT. The
system_output key must be published by some RESULT output. At most one
RESULT per event; the listen graph must be acyclic."""


def default_tool_editor(model: str = "") -> AgentDefinition:
    return AgentDefinition(
        name="tool_editor", description="Maintains the tool registry.",
        instructions=TOOL_EDITOR_INSTRUCTIONS,
        tool_names=["list_tools", "create_tool", "run_tool", "delete_tool"],
        model=model)


def default_agent_editor(model: str = "") -> AgentDefinition:
    return AgentDefinition(
        name="agent_editor", description="Maintains the agent registry.",
        instructions=AGENT_EDITOR_INSTRUCTIONS,
        tool_names=["list_agents", "create_agent", "delete_agent", "list_tools"],
        model=model)


def default_workflow_editor(model: str = "") -> AgentDefinition:
    return AgentDefinition(
        name="workflow_editor", description="Maintains the workflow registry.",
        instructions=WORKFLOW_EDITOR_INSTRUCTIONS,
        tool_names=["list_workflows", "create_workflow", "run_workflow",
                    "delete_workflow", "list_agents"],
        model=model)


# ---------------------------------------------------------------------------
# phase machinery
# ---------------------------------------------------------------------------

@dataclass
class PhaseRecord:
    phase: str
    attempts: int = 0
    ok: bool = False
    feedback: list[str] = field(default_factory=list)


@dataclass
class CreationReport:
    kind: str  # "agents" | "workflow"
    form_xml: str = ""
    phases: list[PhaseRecord] = field(default_factory=list)
    created_tools: list[str] = field(default_factory=list)
    created_agents: list[str] = field(default_factory=list)
    workflow_name: str = ""


def _run_phase(name: str, store: RegistryStore, max_attempts: int,
               attempt_fn, report: CreationReport) -> PhaseRecord:
    """Attempt loop with byte-identical rollback on every failure."""
    record = PhaseRecord(name)
    report.phases.append(record)
    snap = store.snapshot()
    feedback: str | None = None
    for _ in range(max_attempts):
        record.attempts += 1
        ok, fb = attempt_fn(feedback)
        if ok:
            record.ok = True
            return record
        feedback = fb or "the attempt did not pass verification"
        record.feedback.append(feedback)
        store.restore(snap)
    raise PhaseExhaustedError(name)


def _check_test_lines(final_text: str, expected: set[str],
                      exec_tools) -> tuple[bool, str | None]:
    """Verify the editor's demonstration calls: one passing TEST line per tool."""
    demonstrated: dict[str, ToolResult] = {}
    for line in final_text.splitlines():
        stripped = line.strip()
        if not stripped.startswith(TEST_LINE_PREFIX):
            continue
        payload = stripped[len(TEST_LINE_PREFIX):].strip()
        try:
            call = parse_transformed_call(payload)
        except ParseError as err:
            return False, f"unreadable TEST line: {err}"
        if call.tool_name in expected:
            demonstrated[call.tool_name] = exec_tools.run(call)
    for name in sorted(expected):
        result = demonstrated.get(name)
        if result is None:
            return False, f"no TEST line demonstrates tool {name}"
        if result.status != "ok":
            return False, (f"the TEST call for {name} failed "
                           f"({result.error_kind}): {result.payload}")
    return True, None


def _tools_phase_task(pairs: list[tuple[str, str, str]]) -> str:
    lines = ["Create the following tools in the registry:"]
    for name, description, owner in pairs:
        suffix = f" (used by {owner})" if owner else ""
        lines.append(f"- {name}: {description}{suffix}")
    lines.append("")
    lines.append("Finish with one TEST line per tool demonstrating a successful call.")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# pipeline: agents from a requirement
# ---------------------------------------------------------------------------

def create_agents_pipeline(requirement: str, engine, store: RegistryStore, *,
                           suite: ManagementToolSuite | None = None,
                           tool_editor: AgentDefinition | None = None,
                           agent_editor: AgentDefinition | None = None,
                           max_attempts: int = 3,
                           test_task: str | None = None,
                           limits: kernel.LoopLimits | None = None,
                           model: str = "") -> CreationReport:
    """Requirement -> validated agent form -> tools -> registered agents.

    Raises PhaseExhaustedError when a phase cannot pass within max_attempts;
    the registry is left as that phase found it.
    """
    suite = suite if suite is not None else ManagementToolSuite(store, engine=engine)
    tool_editor = tool_editor or default_tool_editor(model)
    agent_editor = agent_editor or default_agent_editor(model)
    report = CreationReport(kind="agents")
    captured: dict[str, AgentForm] = {}

    def profile_attempt(feedback):
        user = requirement if feedback is None else f"{requirement}\n\n{feedback}"
        text = engine.complete_text(
            [{"role": "system", "content": PROFILER_INSTRUCTIONS},
             {"role": "user", "content": user}], model=model)
        xml = extract_xml(text, "agents")
        if xml is None:
            return False, "No <agents> document found. Output only the XML document."
        try:
            form = parse_agent_form(xml)
        except (XmlError, SchemaError, ActionTypeError) as err:
            return False, f"The XML was rejected ({err.code}): {err}"
        diagnostics = validate_agent_form(form, store.view())
        if diagnostics:
            return False, diagnostics_to_feedback(diagnostics)
        captured["form"] = form
        report.form_xml = xml
        return True, None

    _run_phase("profiling", store, max_attempts, profile_attempt, report)
    form = captured["form"]

    new_tools = [(t.name, t.description, a.name)
                 for a in form.agents for t in a.tools_new]
    expected_tools = {name for name, _, _ in new_tools}
    if new_tools:
        task = _tools_phase_task(new_tools)

        def tools_attempt(feedback):
            full_task = task if feedback is None else \
                f"{task}\n\nPrevious attempt failed: {feedback}"
            outcome = kernel.run_agent_loop(tool_editor, full_task, Context(),
                                            engine, suite, limits)
            if outcome.kind != "completed":
                return False, f"editor run ended with {outcome.kind}: {outcome.reason}"
            registered = set(store.list_tools())
            for name in sorted(expected_tools):
                if name not in registered:
                    return False, f"tool {name} was not created"
            return _check_test_lines(outcome.text, expected_tools, suite.exec_tools)

        _run_phase("tools", store, max_attempts, tools_attempt, report)
        report.created_tools = sorted(expected_tools)

    def agents_attempt(feedback):
        lines = ["Create the following agents in the registry:"]
        for agent in form.agents:
            tool_names = [t.name for t in agent.tools_existing + agent.tools_new]
            lines.append(f"- name: {agent.name}")
            lines.append(f"  description: {agent.description}")
            lines.append(f"  instructions: {agent.instructions}")
            if tool_names:
                lines.append(f"  tools: {', '.join(tool_names)}")
        task = "\n".join(lines)
        if feedback is not None:
            task += f"\n\nPrevious attempt failed: {feedback}"
        outcome = kernel.run_agent_loop(agent_editor, task, Context(),
                                        engine, suite, limits)
        if outcome.kind != "completed":
            return False, f"editor run ended with {outcome.kind}: {outcome.reason}"
        registered = set(store.list_agents())
        for agent in form.agents:
            if agent.name not in registered:
                return False, f"agent {agent.name} was not created"
        return True, None

    _run_phase("agents", store, max_attempts, agents_attempt, report)
    report.created_agents = [a.name for a in form.agents]

    if test_task is not None:
        def test_attempt(feedback):
            agent = store.get_agent(form.agents[0].name)
            outcome = kernel.run_agent_loop(agent, test_task, Context(),
                                            engine, suite.exec_tools, limits)
            if outcome.kind != "completed":
                return False, f"test run ended with {outcome.kind}: {outcome.reason}"
            return True, None

        _run_phase("test", store, max_attempts, test_attempt, report)

    return report


# ---------------------------------------------------------------------------
# pipeline: workflow from a requirement
# ---------------------------------------------------------------------------

def create_workflow_pipeline(requirement: str, engine, store: RegistryStore, *,
                             suite: ManagementToolSuite | None = None,
                             tool_editor: AgentDefinition | None = None,
                             agent_editor: AgentDefinition | None = None,
                             workflow_editor: AgentDefinition | None = None,
                             max_attempts: int = 3,
                             test_input: str | None = None,
                             limits: kernel.LoopLimits | None = None,
                             model: str = "") -> CreationReport:
    """Requirement -> validated workflow form -> agents -> registered workflow."""
    suite = suite if suite is not None else ManagementToolSuite(store, engine=engine)
    tool_editor = tool_editor or default_tool_editor(model)
    agent_editor = agent_editor or default_agent_editor(model)
    workflow_editor = workflow_editor or default_workflow_editor(model)
    report = CreationReport(kind="workflow")
    captured: dict[str, WorkflowForm] = {}

    def profile_attempt(feedback):
        user = requirement if feedback is None else f"{requirement}\n\n{feedback}"
        text = engine.complete_text(
            [{"role": "system", "content": WORKFLOW_PROFILER_INSTRUCTIONS},
             {"role": "user", "content": user}], model=model)
        xml = extract_xml(text, "workflow")
        if xml is None:
            return False, "No <workflow> document found. Output only the XML document."
        try:
            form = parse_workflow_form(xml)
        except (XmlError, SchemaError, ActionTypeError) as err:
            return False, f"The XML was rejected ({err.code}): {err}"
        diagnostics = validate_workflow_form(form, store.view())
        if diagnostics:
            return False, diagnostics_to_feedback(diagnostics)
        captured["form"] = form
        report.form_xml = xml
        return True, None

    _run_phase("profiling", store, max_attempts, profile_attempt, report)
    form = captured["form"]

    new_decls = [d for d in form.agents if d.category == "new"]
    new_tools = [(t.name, t.description, d.name) for d in new_decls for t in d.tools]
    expected_tools = {name for name, _, _ in new_tools}
    if new_tools:
        task = _tools_phase_task(new_tools)

        def tools_attempt(feedback):
            full_task = task if feedback is None else \
                f"{task}\n\nPrevious attempt failed: {feedback}"
            outcome = kernel.run_agent_loop(tool_editor, full_task, Context(),
                                            engine, suite, limits)
            if outcome.kind != "completed":
                return False, f"editor run ended with {outcome.kind}: {outcome.reason}"
            registered = set(store.list_tools())
            for name in sorted(expected_tools):
                if name not in registered:
                    return False, f"tool {name} was not created"
            return _check_test_lines(outcome.text, expected_tools, suite.exec_tools)

        _run_phase("tools", store, max_attempts, tools_attempt, report)
        report.created_tools = sorted(expected_tools)

    if new_decls:
        def agents_attempt(feedback):
            lines = ["Create the following agents in the registry:"]
            for decl in new_decls:
                lines.append(f"- name: {decl.name}")
                lines.append(f"  description: {decl.description}")
                lines.append(f"  instructions: {decl.description}")
                if decl.tools:
                    lines.append(f"  tools: {', '.join(t.name for t in decl.tools)}")
            task = "\n".join(lines)
            if feedback is not None:
                task += f"\n\nPrevious attempt failed: {feedback}"
            outcome = kernel.run_agent_loop(agent_editor, task, Context(),
                                            engine, suite, limits)
            if outcome.kind != "completed":
                return False, f"editor run ended with {outcome.kind}: {outcome.reason}"
            registered = set(store.list_agents())
            for decl in new_decls:
                if decl.name not in registered:
                    return False, f"agent {decl.name} was not created"
            return True, None

        _run_phase("agents", store, max_attempts, agents_attempt, report)
        report.created_agents = [d.name for d in new_decls]

    canonical_xml = workflow_form_to_xml(form)

    def register_attempt(feedback):
        task = ("Register this workflow with create_workflow. "
                "Pass the XML exactly as given:\n" + canonical_xml)
        if feedback is not None:
            task += f"\n\nPrevious attempt failed: {feedback}"
        outcome = kernel.run_agent_loop(workflow_editor, task, Context(),
                                        engine, suite, limits)
        if outcome.kind != "completed":
            return False, f"editor run ended with {outcome.kind}: {outcome.reason}"
        if form.name not in store.list_workflows():
            return False, f"workflow {form.name} was not registered"
        return True, None

    _run_phase("register", store, max_attempts, register_attempt, report)
    report.workflow_name = form.name

    if test_input is not None:
        from .registry import make_registry_resolver

        def test_attempt(feedback):
            registered = store.get_workflow(form.name)
            result = workflow_mod.run_workflow(
                registered, test_input, engine,
                tools=suite.exec_tools,
                resolve_agent=make_registry_resolver(store, registered,
                                                     suite.exec_tools),
                limits=limits)
            if result.status != "completed":
                return False, (f"test run {result.status}"
                               f" ({result.error}): {result.reason}")
            return True, None

        _run_phase("test", store, max_attempts, test_attempt, report)

    return report


# ---------------------------------------------------------------------------
# orchestrator assembly
# ---------------------------------------------------------------------------

def make_orchestrator_agent(workers: list[AgentDefinition],
                            name: str = "orchestrator",
                            model: str = "") -> tuple[AgentDefinition, list[AgentDefinition]]:
    """Build a coordinator over >= 2 workers.

    Returns the orchestrator plus worker copies that can transfer back to it;
    the inputs are not mutated. Fewer than two workers raises
    TooFewAgentsError (a single agent needs no coordination layer).
    """
    if len(workers) < 2:
        raise TooFewAgentsError(
            f"need at least 2 agents to orchestrate, got {len(workers)}")
    lines = [f"- {w.name}: {w.description or '(no description)'}" for w in workers]
    instructions = (
        "You coordinate a team of specialist agents. Read the task, delegate "
        "each part to the best specialist with its transfer tool, and when "
        "control returns, either delegate again or reply with the final "
        "consolidated answer.\n\nSpecialists:\n" + "\n".join(lines))
    orchestrator = AgentDefinition(
        name=name, description="Coordinates the specialist team.",
        instructions=instructions,
        transfer_targets=[w.name for w in workers], model=model)
    adjusted = []
    for worker in workers:
        targets = list(worker.transfer_targets)
        if name not in targets:
            targets.append(name)
        adjusted.append(replace(worker, transfer_targets=targets))
    return orchestrator, adjusted
