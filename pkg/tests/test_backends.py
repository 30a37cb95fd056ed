"""Scripted and tabular backend behavior, calibration, and memorization."""

from __future__ import annotations

import math
from dataclasses import replace

import pytest

from selfloop.actor import ActorSample
from selfloop.backends import (
    BackendConfig,
    BackendError,
    ErrorModel,
    ScriptedBackend,
    TabularBackend,
    VerbRates,
    build_backend,
)
from selfloop.critic import CriticSample
from selfloop.instructions import make_instruction, parse_instruction
from selfloop.prompts import load_templates
from selfloop.records import ActionRecord
from selfloop.seeding import keyed_rng
from selfloop.worldsim import legal_actions, observe, reset, step
from selfloop.worldsim.state import FIRST_PERSON, THIRD_PERSON

from conftest import make_scene, noisy_backend, obj, run_actions, zero_error_backend

TEMPLATES = load_templates()
DETECT = TEMPLATES["success_detection"]
ACTOR = TEMPLATES["actor_interaction"]
STATE_TPL = TEMPLATES["self_ask_state"]
SCAN = TEMPLATES["relabel_scan"]


def detection_scene():
    return make_scene(
        [
            obj("cabinet", (3, 1), ("openable",)),
            obj("drawer", (1, 3), ("openable",)),
            obj("fridge", (5, 1), ("openable",)),
            obj("apple", (3, 5), ("pickupable",)),
        ]
    )


def success_frame(opened=("cabinet",), seed=1):
    state = reset(detection_scene(), seed)
    for target in opened:
        state = state.with_objects([replace(state.object(target), opened=True)])
    return observe(state, THIRD_PERSON)


class TestScriptedCritic:
    def test_zero_error_matches_oracle(self):
        backend = zero_error_backend()
        instruction = make_instruction("open", "cabinet")
        assert backend.critic_detect(instruction, DETECT, success_frame()).label == "yes"
        assert backend.critic_detect(instruction, DETECT, success_frame(opened=())).label == "no"

    def test_certain_false_negative(self):
        backend = noisy_backend(fnr=1.0)
        result = backend.critic_detect(make_instruction("open", "cabinet"), DETECT, success_frame())
        assert result.label == "no"

    def test_certain_false_positive(self):
        backend = noisy_backend(fpr=1.0)
        result = backend.critic_detect(make_instruction("open", "cabinet"), DETECT, success_frame(opened=()))
        assert result.label == "yes"

    def test_false_negative_rate_calibrates_over_distinct_frames(self):
        # Binomial picture: 10k draws at p=0.3 has sigma ~ 0.0046, so the
        # empirical flip fraction lands inside 0.3 +/- 0.01 comfortably.
        # Distinct frames come from sweeping the agent pose over a 50x50 grid.
        backend = noisy_backend(seed=5, fnr=0.3)
        instruction = make_instruction("open", "cabinet")
        scene = make_scene([obj("cabinet", (0, 0), ("openable",), opened=True)], grid=(50, 50), start=(1, 1))
        base = reset(scene, 1)
        flips = 0
        trials = 0
        for x in range(50):
            for y in range(50):
                for facing in ("north", "east", "south", "west"):
                    frame = observe(replace(base, agent=replace(base.agent, cell=(x, y), facing=facing)), THIRD_PERSON)
                    flips += backend.critic_detect(instruction, DETECT, frame).label == "no"
                    trials += 1
        assert trials == 10_000
        assert 0.29 <= flips / trials <= 0.31

    def test_per_verb_rates_override_defaults(self):
        model = ErrorModel(false_negative_rate=0.0, per_verb={"open": VerbRates(false_negative_rate=1.0)})
        backend = ScriptedBackend(BackendConfig(kind="scripted", seed=1, error_model=model))
        assert backend.critic_detect(make_instruction("open", "cabinet"), DETECT, success_frame()).label == "no"

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError, match="out of"):
            ErrorModel(false_negative_rate=1.5).validate()


class TestStateAnalysis:
    def test_opened_cabinet_reads_open(self):
        analysis = zero_error_backend().critic_state_analysis("cabinet", STATE_TPL, success_frame())
        assert analysis.state_text == "open"

    def test_closed_drawer_reads_closed(self):
        analysis = zero_error_backend().critic_state_analysis("drawer", STATE_TPL, success_frame())
        assert analysis.state_text == "closed"

    def test_absent_object_reads_not_present(self):
        analysis = zero_error_backend().critic_state_analysis("unicorn", STATE_TPL, success_frame())
        assert analysis.state_text == "not present"

    def test_rejudge_matches_tokens(self):
        backend = zero_error_backend()
        instruction = make_instruction("open", "cabinet")
        yes = backend.critic_rejudge(backend.critic_state_analysis("cabinet", STATE_TPL, success_frame()), instruction)
        assert yes.label == "yes" and yes.provenance == "self_asked"
        no = backend.critic_rejudge(
            backend.critic_state_analysis("cabinet", STATE_TPL, success_frame(opened=())), instruction
        )
        assert no.label == "no"

    def test_rejudge_absent_target_is_no(self):
        backend = zero_error_backend()
        result = backend.critic_rejudge(
            backend.critic_state_analysis("unicorn", STATE_TPL, success_frame()),
            make_instruction("break", "unicorn"),
        )
        assert result.label == "no"


class TestScan:
    def test_canonical_order_picks_first_id(self):
        backend = zero_error_backend()
        frame = success_frame(opened=("drawer", "fridge"))
        assert backend.critic_scan_other_objects("open", SCAN, frame, exclude=("cabinet",)) == "drawer"

    def test_exclusions_respected(self):
        backend = zero_error_backend()
        frame = success_frame(opened=("drawer", "fridge"))
        assert backend.critic_scan_other_objects("open", SCAN, frame, exclude=("cabinet", "drawer")) == "fridge"

    def test_no_candidate_returns_none(self):
        backend = zero_error_backend()
        assert backend.critic_scan_other_objects("break", SCAN, success_frame()) is None

    def test_relabel_surface_templates(self):
        backend = zero_error_backend()
        assert backend.critic_relabel("drawer", "open").raw == "open the drawer"
        assert backend.critic_relabel("mug", "break").raw == "break the mug"
        assert backend.critic_relabel("bench", "sit").raw == "sit on the bench"

    def test_relabel_without_object_is_a_contract_error(self):
        with pytest.raises(ValueError):
            zero_error_backend().critic_relabel("", "open")


class TestScriptedActor:
    def test_oracle_greedy_picks_visible_target(self):
        scene = make_scene([obj("lettuce", (3, 2), ("pickupable",))])
        state = reset(scene, 1)
        action = zero_error_backend().actor_plan(
            parse_instruction("pick up the lettuce"), ACTOR, observe(state, FIRST_PERSON), state=state, step=1
        )
        assert action == ActionRecord(action="PickupObject", target="lettuce", reasoning=action.reasoning)

    def test_full_noise_action_is_replayable(self):
        # Independent oracle: the same keyed draw over the legal action set.
        scene = detection_scene()
        state = reset(scene, 42)
        instruction = parse_instruction("pick up the apple")
        backend = noisy_backend(seed=9, misact=1.0)
        observation = observe(state, FIRST_PERSON)
        choices = legal_actions(observation)
        rng = keyed_rng(9, "misact-pick", state.rng_seed, 1, instruction.raw, 0)
        predicted = choices[rng.randrange(len(choices))]
        for _ in range(3):
            action = backend.actor_plan(instruction, ACTOR, observation, state=state, step=1)
            assert (action.action, action.target) == (predicted.action, predicted.target)

    def test_actor_requires_state_oracle(self):
        scene = detection_scene()
        state = reset(scene, 1)
        with pytest.raises(BackendError):
            zero_error_backend().actor_plan(
                parse_instruction("pick up the apple"), ACTOR, observe(state, FIRST_PERSON)
            )

    def test_actor_rejects_third_person_input(self):
        scene = detection_scene()
        state = reset(scene, 1)
        with pytest.raises(ValueError):
            zero_error_backend().actor_plan(
                parse_instruction("pick up the apple"), ACTOR, observe(state, THIRD_PERSON), state=state
            )

    def test_refine_keeps_legal_and_fixes_illegal(self):
        scene = make_scene([obj("lettuce", (3, 2), ("pickupable",))])
        state = reset(scene, 1)
        observation = observe(state, FIRST_PERSON)
        backend = zero_error_backend()
        instruction = parse_instruction("pick up the lettuce")
        legal = ActionRecord(action="MoveAhead")
        assert backend.actor_refine(instruction, ACTOR, observation, legal, state=state) == legal
        illegal = ActionRecord(action="OpenObject", target="ghost")
        fixed = backend.actor_refine(instruction, ACTOR, observation, illegal, state=state)
        assert (fixed.action, fixed.target) == ("PickupObject", "lettuce")

    def test_purity_under_seed(self):
        scene = detection_scene()
        instruction = parse_instruction("open the cabinet")

        def transcript():
            backend = noisy_backend(seed=77, fnr=0.5, fpr=0.5, misact=0.5)
            state = reset(scene, 5)
            out = []
            for step_index in range(1, 6):
                action = backend.actor_plan(instruction, ACTOR, observe(state, FIRST_PERSON), state=state, step=step_index)
                state, outcome = step(state, action)
                out.append((action.action, action.target, outcome.ok))
            out.append(backend.critic_detect(instruction, DETECT, observe(state, THIRD_PERSON)).label)
            return out

        assert transcript() == transcript()


class TestTabular:
    def frame_and_instruction(self):
        return success_frame(), make_instruction("open", "cabinet")

    def test_memorized_label_wins_over_noise(self):
        frame, instruction = self.frame_and_instruction()
        backend = TabularBackend(
            BackendConfig(kind="tabular", seed=1, error_model=ErrorModel(false_negative_rate=1.0)), role="critic"
        )
        assert backend.critic_detect(instruction, DETECT, frame).label == "no"  # pure fallback
        backend.fine_tune([CriticSample(instruction=instruction, frame=frame)])
        assert backend.critic_detect(instruction, DETECT, frame).label == "yes"  # memorization dominates

    def test_actor_memorization_returns_exact_action(self):
        scene = detection_scene()
        state = reset(scene, 3)
        observation = observe(state, FIRST_PERSON)
        instruction = parse_instruction("open the cabinet")
        sample = ActorSample(
            instruction=instruction, observation=observation, action=ActionRecord(action="OpenObject", target="cabinet")
        )
        backend = TabularBackend(
            BackendConfig(kind="tabular", seed=1, error_model=ErrorModel(misact_rate=1.0)), role="actor"
        )
        backend.fine_tune([sample])
        recalled = backend.actor_plan(instruction, ACTOR, observation, state=state, step=1)
        assert (recalled.action, recalled.target) == ("OpenObject", "cabinet")

    def test_empty_dataset_changes_nothing(self):
        backend = TabularBackend(BackendConfig(kind="tabular", seed=1), role="both")
        backend.fine_tune([])
        assert backend.export_memory() == {}

    def test_conflicts_resolve_by_majority(self):
        scene = detection_scene()
        state = reset(scene, 3)
        observation = observe(state, FIRST_PERSON)
        instruction = parse_instruction("open the cabinet")

        def sample(action):
            return ActorSample(instruction=instruction, observation=observation, action=action)

        votes = [
            sample(ActionRecord(action="MoveAhead")),
            sample(ActionRecord(action="OpenObject", target="cabinet")),
            sample(ActionRecord(action="MoveAhead")),
        ]
        backend = TabularBackend(BackendConfig(kind="tabular", seed=1), role="actor")
        backend.fine_tune(votes)
        assert backend.actor_plan(instruction, ACTOR, observation, state=state).action == "MoveAhead"

    def test_conflict_tie_resolves_by_recency(self):
        scene = detection_scene()
        state = reset(scene, 3)
        observation = observe(state, FIRST_PERSON)
        instruction = parse_instruction("open the cabinet")

        def sample(action):
            return ActorSample(instruction=instruction, observation=observation, action=action)

        backend = TabularBackend(BackendConfig(kind="tabular", seed=1), role="actor")
        backend.fine_tune([sample(ActionRecord(action="MoveAhead")), sample(ActionRecord(action="RotateLeft"))])
        assert backend.actor_plan(instruction, ACTOR, observation, state=state).action == "RotateLeft"

    def test_role_schema_mismatch(self):
        frame, instruction = self.frame_and_instruction()
        backend = TabularBackend(BackendConfig(kind="tabular", seed=1), role="actor")
        with pytest.raises(ValueError, match="schema mismatch"):
            backend.fine_tune([CriticSample(instruction=instruction, frame=frame)])

    def test_untrained_tabular_equals_scripted_with_same_seed(self):
        scene = detection_scene()
        instruction = parse_instruction("open the cabinet")
        model = ErrorModel(false_negative_rate=0.4, false_positive_rate=0.2, misact_rate=0.5)
        tabular = TabularBackend(BackendConfig(kind="tabular", seed=11, error_model=model), role="both")
        scripted = ScriptedBackend(BackendConfig(kind="scripted", seed=11, error_model=model))
        for seed in range(5):
            state = reset(scene, seed)
            observation = observe(state, FIRST_PERSON)
            frame = observe(state, THIRD_PERSON)
            assert tabular.actor_plan(instruction, ACTOR, observation, state=state, step=1) == scripted.actor_plan(
                instruction, ACTOR, observation, state=state, step=1
            )
            assert tabular.critic_detect(instruction, DETECT, frame) == scripted.critic_detect(instruction, DETECT, frame)


class TestConfig:
    def test_kind_field_pairing_enforced(self):
        with pytest.raises(ValueError):
            BackendConfig(kind="scripted", endpoint_url="http://x").validate()
        with pytest.raises(ValueError):
            BackendConfig(kind="scripted", memory={"k": {}}).validate()
        with pytest.raises(ValueError):
            BackendConfig(kind="remote").validate()

    def test_build_backend_dispatch(self):
        assert isinstance(build_backend(BackendConfig(kind="scripted")), ScriptedBackend)
        assert isinstance(build_backend(BackendConfig(kind="tabular"), role="critic"), TabularBackend)

    def test_config_round_trip(self):
        config = BackendConfig(
            kind="tabular",
            seed=5,
            error_model=ErrorModel(false_negative_rate=0.3, per_verb={"open": VerbRates(misact_rate=0.1)}),
        )
        assert BackendConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()

    def test_scripted_fine_tune_is_a_noop_with_warning(self, caplog):
        backend = zero_error_backend()
        with caplog.at_level("WARNING"):
            assert backend.fine_tune([1, 2, 3]) is backend
        assert any("does not learn" in message for message in caplog.messages)


def test_error_model_math_sanity():
    # sigma for the 10k calibration bound quoted in the class above
    assert math.isclose(math.sqrt(0.3 * 0.7 / 10_000), 0.00458, abs_tol=1e-4)
