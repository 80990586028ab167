"""Tests for step producers."""

import json

import httpx
import pytest

from src.config import RuntimeSettings
from src.models import StepSpec
from src.plan_format import parse_plan, plan_to_dag
from src.producers import (
    ProducerError,
    RemoteProducer,
    RemoteProducerError,
    ScriptedProducer,
    ScriptMissingError,
    SyntheticProducer,
    create_producer,
)


def _remote(handler):
    return RemoteProducer("http://producer.test/generate", transport=httpx.MockTransport(handler))


async def test_scripted_looks_up_index_then_trans_id():
    producer = ScriptedProducer({"steps": {1: "by index", "t:n2": "by id"}})

    assert (await producer.produce("", StepSpec(index=1, trans_id="t:n1"))).text == "by index"
    assert (await producer.produce("", StepSpec(index=2, trans_id="t:n2"))).text == "by id"
    assert producer.get_stats() == {"calls": 2, "tokensProduced": 4, "errors": 0}


async def test_scripted_missing_entries():
    producer = ScriptedProducer({"steps": {}})

    with pytest.raises(ScriptMissingError, match="step 3"):
        await producer.produce("", StepSpec(index=3))
    with pytest.raises(ScriptMissingError):
        await producer.produce("", StepSpec(kind="plan"))
    with pytest.raises(ScriptMissingError):
        await producer.produce("", StepSpec(kind="conclusion"))
    assert producer.errors == 3


def test_scripted_from_file_errors(tmp_path):
    with pytest.raises(ProducerError, match="Cannot load script"):
        ScriptedProducer.from_file(tmp_path / "missing.yaml")

    listed = tmp_path / "list.yaml"
    listed.write_text("- plan\n", encoding="utf-8")
    with pytest.raises(ProducerError, match="must be a mapping"):
        ScriptedProducer.from_file(listed)


async def test_stream_plan_chunks(diamond_script):
    diamond_script.chunk_size = 5
    chunks = [chunk async for chunk in diamond_script.stream_plan("prompt")]

    assert "".join(chunks) == diamond_script.plan
    assert all(len(chunk) <= 5 for chunk in chunks)


async def test_synthetic_is_deterministic():
    spec = StepSpec(trans_id="t:n1", description="check")
    first = await SyntheticProducer(seed=3).produce("context", spec)
    second = await SyntheticProducer(seed=3).produce("context", spec)
    other = await SyntheticProducer(seed=4).produce("context", spec)

    assert first == second
    assert first.text != other.text


async def test_synthetic_step_length_bounds():
    producer = SyntheticProducer(min_tokens=3, max_tokens=5)
    for i in range(20):
        produced = await producer.produce(f"context {i}", StepSpec(trans_id=f"t:n{i}"))
        assert 3 <= len(produced.token_ids) <= 5


def test_synthetic_rejects_bad_bounds():
    with pytest.raises(ValueError):
        SyntheticProducer(min_tokens=10, max_tokens=5)


@pytest.mark.parametrize("prompt", ["a", "b", "c", "diagnose", "plan a trip"])
def test_synthetic_plans_are_valid(prompt):
    plan = parse_plan(SyntheticProducer(seed=1).generate_plan(prompt))
    dag = plan_to_dag(plan)
    assert len(dag.sinks()) == 1


async def test_synthetic_echoes_plan_in_context(diamond_script):
    produced = await SyntheticProducer().produce("prefix\n" + diamond_script.plan, StepSpec(kind="plan"))
    assert produced.text == diamond_script.plan


async def test_remote_producer_posts_context_and_spec():
    seen = {}

    def handler(request):
        seen.update(json.loads(request.content))
        return httpx.Response(200, json={"text": "hello world"})

    async with _remote(handler) as producer:
        produced = await producer.produce("ctx", StepSpec(trans_id="t:n1", index=1))
        assert producer.client is not None

    assert produced.text == "hello world"
    assert len(produced.token_ids) == 2
    assert seen["context"] == "ctx"
    assert seen["spec"]["trans_id"] == "t:n1"
    assert seen["maxTokens"] == 256
    assert producer.client is None


async def test_remote_producer_http_error():
    producer = _remote(lambda request: httpx.Response(500, json={"error": "boom"}))
    with pytest.raises(RemoteProducerError, match="HTTP 500"):
        await producer.produce("ctx", StepSpec(trans_id="t:n1"))
    assert producer.errors == 1
    await producer.close()


async def test_remote_producer_requires_text_field():
    producer = _remote(lambda request: httpx.Response(200, json={"output": "x"}))
    with pytest.raises(RemoteProducerError, match="no 'text' field"):
        await producer.produce("ctx", StepSpec(trans_id="t:n1"))
    await producer.close()


async def test_remote_producer_rejects_non_json():
    producer = _remote(lambda request: httpx.Response(200, text="not json"))
    with pytest.raises(RemoteProducerError, match="failed"):
        await producer.produce("ctx", StepSpec(trans_id="t:n1"))
    await producer.close()


def test_create_producer(fixtures_dir):
    synthetic = create_producer(RuntimeSettings(seed=5, step_tokens_min=2, step_tokens_max=4))
    assert isinstance(synthetic, SyntheticProducer)
    assert (synthetic.seed, synthetic.min_tokens, synthetic.max_tokens) == (5, 2, 4)

    scripted = create_producer(RuntimeSettings(producer="scripted"), fixtures_dir / "diamond_script.yaml")
    assert isinstance(scripted, ScriptedProducer)
    assert scripted.steps["3"].startswith("Fever together")

    remote = create_producer(RuntimeSettings(producer="remote", endpoint="http://localhost/gen", max_tokens=64))
    assert isinstance(remote, RemoteProducer)
    assert remote.max_tokens == 64


def test_create_scripted_producer_needs_script():
    with pytest.raises(ProducerError, match="needs a script"):
        create_producer(RuntimeSettings(producer="scripted"))
