"""Remote backend conformance against a local stub chat endpoint.

The stub is an independent mock model: it reads only the request JSON
(prompt text plus the scene-description stand-in for the image) and
answers in the documented output formats.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from selfloop.actor import collect_trajectory
from selfloop.backends import BackendConfig, BackendError, PromptContext, RemoteBackend
from selfloop.backends.remote import parse_reply_field, _parse_action, _parse_result
from selfloop.critic import evaluate_trajectory
from selfloop.instructions import parse_instruction
from selfloop.prompts import load_templates
from selfloop.worldsim import observe, reset
from selfloop.worldsim.oracle import frame_success
from selfloop.worldsim.state import FIRST_PERSON

from conftest import make_scene, obj

_VERB_ACTION = {
    "pick up": "PickupObject",
    "grab": "GrabObject",
    "open": "OpenObject",
    "break": "BreakObject",
    "sit on": "SitObject",
}

_ADJ_PHRASE = {
    "opened": " open",
    "broken": " broken",
    "picked up": "held by",
    "grabbed": "held by",
    "sat on": "occupied by",
}


def _segments(image: str) -> dict[str, str]:
    parts = {}
    for chunk in image.split("; "):
        match = re.match(r"(\w+) \(", chunk)
        if match:
            parts[match.group(1)] = chunk
    return parts


def mock_model_reply(prompt: str, image: str) -> str:
    """A rule-based stand-in model speaking the documented formats."""
    if "What's your next action" in prompt:
        task = re.search(r"finish the task (pick up|grab|open|break|sit on) the (\w+)", prompt)
        visible = re.search(r"objects you can interact with are ([^.]+)\.", prompt)
        verb, target = task.group(1), task.group(2)
        names = [name.strip() for name in (visible.group(1) if visible else "").split(",")]
        if target in names:
            return f"Action: {_VERB_ACTION[verb]}\nObject: {target}\nReasoning: the {target} is in reach"
        return "Action: MoveAhead\nObject: None\nReasoning: moving toward the target"
    if "Please check whether the" in prompt:
        match = re.search(r"whether the (\w+) in the image is (.+?) or not", prompt)
        target, adjective = match.group(1), match.group(2)
        segment = _segments(image).get(target, "")
        verdict = "yes" if _ADJ_PHRASE[adjective] in segment else "no"
        return f"Result: {verdict}\nReasoning: judged from the frame"
    if "Please check the state of" in prompt:
        match = re.search(r"state of the (\w+) in the image", prompt)
        segment = _segments(image).get(match.group(1))
        if segment is None:
            return "State: not present\nReasoning: nowhere in the frame"
        state = segment.split(")", 1)[1].strip()
        return f"State: {state}\nReasoning: read from the frame"
    if "please determine whether the" in prompt:
        match = re.search(r"is in (.+?) state, please determine whether the (.+?) has been completed", prompt)
        state, instruction = match.group(1), match.group(2)
        verb = instruction.split(" the ")[0]
        token = {"pick up": "held", "grab": "held", "open": "open", "break": "broken", "sit on": "occupied"}[verb]
        return f"Result: {'yes' if token in state else 'no'}\nReasoning: state comparison"
    if "any object that is" in prompt:
        match = re.search(r"any object that is (.+?) by the", prompt)
        phrase = _ADJ_PHRASE[match.group(1)]
        for name, segment in sorted(_segments(image).items()):
            if phrase in segment:
                return f"Object: {name}\nReasoning: its state matches"
        return "Object: None\nReasoning: nothing matches"
    if "give a new instruction" in prompt:
        match = re.search(r"The (\w+) in the observation is (.+?),", prompt)
        target, adjective = match.group(1), match.group(2)
        verb = {"opened": "open", "broken": "break", "picked up": "pick up", "grabbed": "grab", "sat on": "sit on"}[
            adjective
        ]
        return f"New instruction: {verb} the {target}\nReasoning: relabeled"
    return "Reasoning: no idea"


class StubServer:
    def __init__(self, reply_fn):
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length))
                stub.requests.append(payload)
                stub.headers.append({key: value for key, value in self.headers.items()})
                content = payload["messages"][0]["content"]
                prompt = content[0]["text"]
                image = content[1]["text"] if len(content) > 1 else ""
                body = json.dumps({"content": reply_fn(prompt, image)}).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.server.server_port}/chat"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def mock_server():
    server = StubServer(mock_model_reply)
    yield server
    server.close()


def remote_scene():
    return make_scene(
        [
            obj("lettuce", (3, 0), ("pickupable",)),  # 3 cells north: outside range until one step
            obj("drawer", (1, 2), ("openable",)),
        ],
        start=(3, 4),
        facing="north",
    )


def make_remote(url: str) -> RemoteBackend:
    return RemoteBackend(
        BackendConfig(kind="remote", seed=1, endpoint_url=url),
        context=PromptContext(agent="locobot", environment="household"),
    )


class TestEpisodeOverHttp:
    def test_full_episode_and_triage_complete(self, mock_server):
        backend = make_remote(mock_server.url)
        scene = remote_scene()
        instruction = parse_instruction("pick up the lettuce")
        traj = collect_trajectory(backend, reset(scene, 3), instruction, 10, traj_id="remote-demo")
        assert not traj.aborted
        assert len(traj.steps) == 10
        assert frame_success(traj.final_frame, instruction)
        outcome = evaluate_trajectory(backend, traj)
        assert outcome.result == "success_direct"
        # 10 actor calls + 1 detection, one request each (no retries needed)
        assert len(mock_server.requests) == 11

    def test_self_ask_and_relabel_paths_over_http(self, mock_server):
        backend = make_remote(mock_server.url)
        scene = remote_scene()
        instruction = parse_instruction("open the drawer")
        traj = collect_trajectory(backend, reset(scene, 3), instruction, 10)
        # The mock actor walks toward the lettuce-style target but the
        # drawer is off-route, so the episode genuinely fails its task.
        assert not frame_success(traj.final_frame, instruction)
        outcome = evaluate_trajectory(backend, traj)
        assert outcome.result in ("success_relabeled", "discarded")

    def test_wire_format_shape(self, mock_server):
        backend = make_remote(mock_server.url)
        scene = remote_scene()
        state = reset(scene, 3)
        backend.actor_plan(
            parse_instruction("pick up the lettuce"),
            load_templates()["actor_interaction"],
            observe(state, FIRST_PERSON),
            state=state,
        )
        request = mock_server.requests[0]
        assert request["model"] == "default"
        content = request["messages"][0]["content"]
        assert content[0]["type"] == "text"
        assert content[1]["type"] == "image_ref"


class TestRetries:
    def test_malformed_action_block_triggers_exactly_three_retries(self):
        server = StubServer(lambda prompt, image: "I would rather chat about the weather.")
        try:
            backend = make_remote(server.url)
            scene = remote_scene()
            state = reset(scene, 3)
            with pytest.raises(BackendError) as excinfo:
                backend.actor_plan(
                    parse_instruction("pick up the lettuce"),
                    load_templates()["actor_interaction"],
                    observe(state, FIRST_PERSON),
                    state=state,
                )
            assert excinfo.value.kind == "parse"
            assert excinfo.value.raw_response == "I would rather chat about the weather."
            assert len(server.requests) == 4  # 1 attempt + 3 re-prompt retries
            assert "could not be parsed" in server.requests[1]["messages"][0]["content"][0]["text"]
        finally:
            server.close()

    def test_aborted_trajectory_is_flagged_not_dropped(self):
        server = StubServer(lambda prompt, image: "nonsense")
        try:
            backend = make_remote(server.url)
            scene = remote_scene()
            traj = collect_trajectory(backend, reset(scene, 3), parse_instruction("pick up the lettuce"), 10)
            assert traj.aborted
            assert "backend failure at step 1" in traj.abort_reason
            assert traj.steps == ()
        finally:
            server.close()

    def test_connectivity_failure_propagates(self):
        backend = make_remote("http://127.0.0.1:9/nowhere")
        scene = remote_scene()
        state = reset(scene, 3)
        with pytest.raises(BackendError) as excinfo:
            collect_trajectory(backend, state, parse_instruction("pick up the lettuce"), 10)
        assert excinfo.value.kind == "connectivity"


class TestParsing:
    def test_line_anchored_first_match_wins(self):
        text = "Reasoning: Action: fake inline\nAction: MoveAhead\nAction: RotateLeft"
        assert parse_reply_field(text, "action") == "MoveAhead"

    def test_case_insensitive(self):
        assert parse_reply_field("RESULT: Yes", "result") == "Yes"

    def test_navigation_target_coerced_to_none(self):
        record = _parse_action("Action: MoveAhead\nObject: cabinet\nReasoning: echoing anyway")
        assert record is not None and record.target is None

    def test_object_action_without_target_fails_parse(self):
        assert _parse_action("Action: OpenObject\nObject: None") is None

    def test_unknown_action_name_fails_parse(self):
        assert _parse_action("Action: FlyToMoon\nObject: moon") is None

    def test_result_prefixes(self):
        assert _parse_result("Result: Yes, definitely") == "yes"
        assert _parse_result("Result: no.") == "no"
        assert _parse_result("Result: maybe") is None


class TestAuthAndExport:
    def test_bearer_token_from_env(self, mock_server, monkeypatch):
        monkeypatch.setenv("SELFLOOP_TOKEN", "sekrit")
        backend = RemoteBackend(
            BackendConfig(kind="remote", seed=1, endpoint_url=mock_server.url, auth_token_env="SELFLOOP_TOKEN"),
            context=PromptContext(),
        )
        scene = remote_scene()
        state = reset(scene, 3)
        backend.actor_plan(
            parse_instruction("pick up the lettuce"),
            load_templates()["actor_interaction"],
            observe(state, FIRST_PERSON),
            state=state,
        )
        assert mock_server.headers[0].get("Authorization") == "Bearer sekrit"

    def test_fine_tune_exports_dataset(self, tmp_path, mock_server):
        from selfloop.critic import CriticSample
        from selfloop.instructions import make_instruction
        from selfloop.worldsim.state import THIRD_PERSON

        export = tmp_path / "export.jsonl"
        backend = RemoteBackend(
            BackendConfig(kind="remote", seed=1, endpoint_url=mock_server.url, export_path=str(export)),
            context=PromptContext(),
        )
        scene = remote_scene()
        state = reset(scene, 3)
        sample = CriticSample(instruction=make_instruction("open", "drawer"), frame=observe(state, THIRD_PERSON))
        backend.fine_tune([sample])
        lines = export.read_text(encoding="utf-8").strip().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["label"] == "yes"
