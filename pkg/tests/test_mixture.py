"""Condition assembly, epoch repetition, sharding, and training configs."""

import json
from collections import Counter

import pytest

from conftest import make_doc
from rewrite_forge.corpus import QualityTier, RewriteStyle
from rewrite_forge.errors import ConfigError
from rewrite_forge.mixture import (
    MANIFEST_NAME,
    TRAINING_CONFIG_NAME,
    ConditionSpec,
    MixtureBuildError,
    ShardingError,
    build_condition,
    condition_name,
    emit_training_config,
    materialize_condition,
    read_shards,
    shard_dataset,
)

def _originals(sizes, stem=4.0):
    return [make_doc(f"doc-{i}", size, stem=stem) for i, size in enumerate(sizes)]


def _rewrites(originals, factor=1.0):
    corpus = {}
    for style in RewriteStyle:
        corpus[style] = [
            make_doc(
                f"syn-{style.value}-{doc.id}",
                max(1, round(doc.token_count * factor)),
                parent_id=doc.id,
                style=style,
            )
            for doc in originals
        ]
    return corpus


def _spec(tier=QualityTier.HIGH, rewrites=False, target=40, seed=0):
    return ConditionSpec(tier=tier, rewrites=rewrites, target_budget=target, seed=seed)


def test_condition_names():
    assert condition_name(QualityTier.HIGH, True) == "edu+rewrites"
    assert condition_name(QualityTier.HIGH, False) == "edu"
    assert condition_name(QualityTier.LOW, True) == "non-edu+rewrites"
    assert condition_name(QualityTier.LOW, False) == "non-edu"
    with pytest.raises(ConfigError):
        condition_name(QualityTier.UNASSIGNED, False)
    with pytest.raises(ConfigError):
        ConditionSpec(QualityTier.UNASSIGNED, False, 10, 0)


def test_epochs_repeat_originals_to_reach_target():
    docs = _originals([3, 4, 3])
    build = build_condition(_spec(target=40), docs)
    assert build.epochs == 4
    assert build.total_tokens == 40
    assert build.unique_tokens == 10
    assert len(build.documents) == 12
    for start in range(0, 12, 3):
        epoch_ids = {doc.id for doc in build.documents[start : start + 3]}
        assert epoch_ids == {"doc-0", "doc-1", "doc-2"}


def test_two_epoch_build_is_exact():
    build = build_condition(_spec(target=20), _originals([3, 4, 3]))
    assert build.epochs == 2
    assert build.total_tokens == 20
    assert build.unique_tokens == 10


def test_target_equal_to_supply_is_single_epoch():
    docs = _originals([3, 4, 3])
    build = build_condition(_spec(target=10), docs)
    assert build.epochs == 1
    assert build.total_tokens == 10
    assert build.unique_tokens == 10
    assert Counter(d.id for d in build.documents) == Counter(d.id for d in docs)


def test_rewrite_condition_takes_single_pass_over_pool():
    docs = _originals([3, 4, 3])
    corpus = _rewrites(docs)
    build = build_condition(_spec(rewrites=True, target=50), docs, corpus)
    assert build.epochs == 1
    assert build.total_tokens == 50
    assert build.unique_tokens == 50
    ids = [doc.id for doc in build.documents]
    assert len(ids) == len(set(ids))


def test_rewrite_condition_requires_corpus():
    with pytest.raises(MixtureBuildError):
        build_condition(_spec(rewrites=True, target=10), _originals([3, 4, 3]))


def test_shortfall_beyond_tolerance_is_an_error():
    docs = _originals([3, 4, 3])
    corpus = _rewrites(docs)
    with pytest.raises(MixtureBuildError) as excinfo:
        build_condition(_spec(rewrites=True, target=100), docs, corpus)
    assert "shortfall" in str(excinfo.value)


def test_shortfall_within_tolerance_is_accepted():
    docs = _originals([3, 4, 3])
    corpus = _rewrites(docs)
    build = build_condition(
        _spec(rewrites=True, target=50), docs, corpus, tolerance=0.2
    )
    assert build.total_tokens == 50
    padded = build_condition(
        _spec(rewrites=True, target=55), docs, corpus, tolerance=0.2
    )
    assert padded.total_tokens == 50


def test_provenance_is_checked():
    docs = _originals([3, 4, 3])
    orphan = _rewrites(docs)
    orphan[RewriteStyle.EASY][0] = make_doc(
        "syn-x", 3, parent_id="ghost", style=RewriteStyle.EASY
    )
    with pytest.raises(MixtureBuildError) as excinfo:
        build_condition(_spec(rewrites=True, target=40), docs, orphan)
    assert "ghost" in str(excinfo.value)

    not_synthetic = _rewrites(docs)
    not_synthetic[RewriteStyle.HARD][0] = make_doc("plain", 3)
    with pytest.raises(MixtureBuildError):
        build_condition(_spec(rewrites=True, target=40), docs, not_synthetic)

    mislabeled = _rewrites(docs)
    mislabeled[RewriteStyle.HARD][0] = make_doc(
        "syn-y", 3, parent_id="doc-0", style=RewriteStyle.QA
    )
    with pytest.raises(MixtureBuildError):
        build_condition(_spec(rewrites=True, target=40), docs, mislabeled)


def test_empty_original_subset_is_an_error():
    with pytest.raises(MixtureBuildError):
        build_condition(_spec(target=10), [])


def test_unique_token_law():
    docs = _originals([2, 5, 3, 1, 4])
    repeat = build_condition(_spec(target=45), docs)
    assert repeat.epochs == 3
    assert repeat.unique_tokens == 15
    assert repeat.total_tokens == 45
    single = build_condition(
        _spec(rewrites=True, target=60), docs, _rewrites(docs)
    )
    assert single.unique_tokens == single.total_tokens == 60


def test_build_is_deterministic_per_seed():
    docs = _originals([2, 5, 3, 1, 4])
    first = build_condition(_spec(target=45, seed=7), docs)
    second = build_condition(_spec(target=45, seed=7), docs)
    assert [d.id for d in first.documents] == [d.id for d in second.documents]
    shifted = build_condition(_spec(target=45, seed=8), docs)
    assert Counter(d.id for d in shifted.documents) == Counter(
        d.id for d in first.documents
    )


def test_shard_sizes_split_at_token_boundary(tmp_path):
    docs = [make_doc(f"d{i}", 1) for i in range(10)]
    descriptors = shard_dataset(docs, 4, tmp_path)
    assert [d.token_count for d in descriptors] == [4, 4, 2]
    assert [d.doc_count for d in descriptors] == [4, 4, 2]
    assert [d.path for d in descriptors] == [
        "shard_00000.jsonl",
        "shard_00001.jsonl",
        "shard_00002.jsonl",
    ]
    assert read_shards(tmp_path, descriptors) == docs


def test_shard_never_splits_a_document(tmp_path):
    docs = [make_doc("a", 2), make_doc("b", 3), make_doc("c", 2)]
    descriptors = shard_dataset(docs, 4, tmp_path)
    assert [d.token_count for d in descriptors] == [2, 3, 2]


def test_oversize_document_cannot_be_sharded(tmp_path):
    with pytest.raises(ShardingError):
        shard_dataset([make_doc("big", 9)], 4, tmp_path)
    with pytest.raises(ConfigError):
        shard_dataset([], 0, tmp_path)


def test_empty_stream_writes_no_shards(tmp_path):
    assert shard_dataset([], 4, tmp_path) == []


def test_tampered_shard_is_detected(tmp_path):
    docs = [make_doc(f"d{i}", 1) for i in range(4)]
    descriptors = shard_dataset(docs, 2, tmp_path)
    target = tmp_path / descriptors[0].path
    target.write_text(target.read_text(encoding="utf-8") + "\n", encoding="utf-8")
    with pytest.raises(ShardingError):
        read_shards(tmp_path, descriptors)


def test_training_config_is_fixed_across_conditions(tmp_path):
    specs = [
        _spec(QualityTier.HIGH, True),
        _spec(QualityTier.HIGH, False),
        _spec(QualityTier.LOW, True),
        _spec(QualityTier.LOW, False),
    ]
    payloads = []
    for index, spec in enumerate(specs):
        emit_training_config(spec, tmp_path / f"config_{index}.json")
        payloads.append(
            json.loads((tmp_path / f"config_{index}.json").read_text(encoding="utf-8"))
        )
    for payload in payloads:
        assert payload["optimizer_name"] == "AdamW"
        assert payload["learning_rate"] == 3e-4
        assert payload["schedule"] == "cosine"
        assert payload["warmup_fraction"] == 0.05
        assert payload["sequence_length"] == 4096
        without_condition = {k: v for k, v in payload.items() if k != "condition"}
        assert without_condition == {
            k: v for k, v in payloads[0].items() if k != "condition"
        }
    assert len({json.dumps(p["condition"]) for p in payloads}) == 4


def test_materialize_writes_manifest_and_shards(tmp_path):
    docs = _originals([3, 4, 3])
    build = build_condition(_spec(target=20, seed=3), docs)
    dataset = materialize_condition(
        build, tmp_path / "cond", shard_token_size=5, counting_scheme="whitespace"
    )
    manifest = json.loads((tmp_path / "cond" / MANIFEST_NAME).read_text(encoding="utf-8"))
    assert manifest["total_tokens"] == 20
    assert manifest["epochs"] == 2
    assert manifest["unique_tokens"] == 10
    assert manifest["counting_scheme"] == "whitespace"
    assert manifest["training_config"]["learning_rate"] == 3e-4
    assert manifest["condition"]["name"] == "edu"
    assert (tmp_path / "cond" / TRAINING_CONFIG_NAME).exists()
    assert [s["path"] for s in manifest["shards"]] == [d.path for d in dataset.shards]
    assert read_shards(tmp_path / "cond", dataset.shards) == build.documents


def test_materialize_is_deterministic(tmp_path):
    docs = _originals([2, 5, 3, 1, 4])
    for label in ("a", "b"):
        build = build_condition(_spec(target=30, seed=11), docs)
        materialize_condition(
            build, tmp_path / label, shard_token_size=7, counting_scheme="whitespace"
        )
    files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
    files_b = sorted(p.name for p in (tmp_path / "b").iterdir())
    assert files_a == files_b
    for name in files_a:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
