import json

import numpy as np
import pytest
import torch

from vrdre.config import ConfigError, ExperimentConfig, load_config
from vrdre.core import RelationKind
from vrdre.synthetic import generate_corpus, generate_form, nearest_key_parent
from vrdre.train import (
    RelationModel,
    evaluate,
    load_documents,
    load_model,
    save_model,
    score_documents,
    split_held_out,
    train,
)

TINY = {
    "steps": 30,
    "eval_every": 10,
    "d_proj": 16,
    "max_len": 128,
    "backbone": {"hidden_dim": 16, "layers": 1, "heads": 2, "ff_dim": 32, "vocab_size": 512, "max_len": 128},
    "dataset": {"name": "SYNTHETIC", "n_docs": 10, "n_test": 2},
}


def tiny_config(**overrides):
    from vrdre.config import deep_merge

    return ExperimentConfig.from_dict(deep_merge(TINY, overrides))


def tiny_docs(n=4):
    # small forms so windows stay under 128 tokens
    docs = []
    for d in generate_corpus(n, seed=7):
        keep = set(range(min(8, d.n_entities)))
        ents = [e for e in d.entities if e.entity_id in keep]
        segs = [s for s in d.segments if s.segment_id in {e.span[0] for e in ents}]
        links = [(p, c) for p, c in d.links if p in keep and c in keep]
        from vrdre.core import Document

        docs.append(Document(d.doc_id, segs, ents, links, d.relation_kind, d.page_size))
    return docs


class TestConfig:
    def test_batch_size_default(self):
        assert ExperimentConfig().batch_size == 2

    def test_punct_rejected(self):
        with pytest.raises(ConfigError, match="PUNCT"):
            ExperimentConfig.from_dict({"strategies": {"em": "punct"}})

    @pytest.mark.parametrize("bad", [{"tau": 0}, {"batch_size": 0}, {"steps": 0}, {"pooling": "max"},
                                     {"strategies": {"typo": True}}, {"loss_weights": {"var": -1}}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)

    def test_yaml_roundtrip(self, tmp_path):
        cfg = tiny_config(strategies={"bbo": True, "em": "simple"})
        path = tmp_path / "c.yaml"
        import yaml

        path.write_text(yaml.safe_dump(cfg.to_dict()))
        again = load_config(path)
        assert again.to_dict() == cfg.to_dict()
        assert again.strategies.em == "SIMPLE"

    def test_training_key_ignores_decoding(self):
        a = tiny_config(strategies={"rsf": False}, tau=0.1, name="a")
        b = tiny_config(strategies={"rsf": True}, tau=0.3, name="b")
        assert a.training_key() == b.training_key()
        assert a.training_key() != tiny_config(seed=5).training_key()


class TestSynthetic:
    def test_corpus_deterministic(self):
        a = generate_corpus(3, seed=1)
        b = generate_corpus(3, seed=1)
        assert [d.text() for d in a] == [d.text() for d in b]

    def test_rule_holds(self):
        for doc in generate_corpus(5, seed=0):
            seg = {s.segment_id: s for s in doc.segments}
            keys = [e for e in doc.entities if e.label == "question"]
            parents = {c: p for p, c in doc.links}
            for e in doc.entities:
                if e.label != "answer":
                    continue
                expected = nearest_key_parent(seg[e.span[0]].box, [(k.entity_id, seg[k.span[0]].box) for k in keys])
                assert parents.get(e.entity_id) == expected

    def test_split_sizes(self):
        ds = tiny_config().dataset
        assert len(load_documents(ds, "train")) == 8
        assert len(load_documents(ds, "test")) == 2


class TestTraining:
    def test_loss_decreases(self):
        cfg = tiny_config(steps=100, eval_every=1000, held_out_fraction=0.0)
        result = train(cfg, tiny_docs(4))
        first = np.mean([r["loss"] for r in result.log[:5]])
        last = np.mean([r["loss"] for r in result.log[-5:]])
        assert last < first

    def test_deterministic(self, tmp_path):
        cfg = tiny_config(strategies={"bbs": True, "eef": True, "variance_loss": True})
        docs = tiny_docs(4)
        a = train(cfg, docs, log_path=tmp_path / "a.ndjson")
        b = train(cfg, docs, log_path=tmp_path / "b.ndjson")
        assert (tmp_path / "a.ndjson").read_bytes() == (tmp_path / "b.ndjson").read_bytes()
        save_model(tmp_path / "a.ckpt", a)
        save_model(tmp_path / "b.ckpt", b)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_log_format(self, tmp_path):
        cfg = tiny_config(steps=3, strategies={"eef": True})
        train(cfg, tiny_docs(2), validation=[], log_path=tmp_path / "log")
        records = [json.loads(line) for line in (tmp_path / "log").read_text().splitlines()]
        assert [r["step"] for r in records] == [1, 2, 3]
        assert set(records[0]["components"]) == {"re", "ee"}

    def test_checkpoint_roundtrip(self, tmp_path):
        cfg = tiny_config(steps=5, strategies={"lc": True, "eef": True})
        result = train(cfg, tiny_docs(3))
        save_model(tmp_path / "m.ckpt", result)
        model, meta = load_model(tmp_path / "m.ckpt")
        assert meta["selection"]["best_step"] == result.best_step
        docs = tiny_docs(2)
        s1 = score_documents(result.model, docs)
        s2 = score_documents(model, docs)
        for k in s1:
            np.testing.assert_allclose(s1[k].probs.probs, s2[k].probs.probs, rtol=0, atol=1e-6)

    def test_divergence_reported(self):
        cfg = tiny_config(steps=3, lr=1e30)
        from vrdre.train import TrainingDiverged

        with pytest.raises(TrainingDiverged) as info:
            train(cfg, tiny_docs(2), validation=[])
        assert info.value.step >= 1

    def test_held_out_split(self):
        docs = tiny_docs(10)
        tr, val = split_held_out(docs, 0.1, np.random.default_rng(0))
        assert len(val) == 1 and len(tr) == 9
        assert {d.doc_id for d in tr}.isdisjoint({d.doc_id for d in val})


class TestEvaluate:
    def test_rsf_flag_echoed(self):
        cfg = tiny_config(steps=2)
        model = RelationModel(cfg, ("question", "answer", "header", "other"), torch.Generator().manual_seed(0))
        report, preds = evaluate(model, tiny_docs(2), rsf=True, tau=0.1)
        assert report.extra == {"rsf": True, "tau": 0.1}
        assert set(preds) == {d.doc_id for d in tiny_docs(2)}

    def test_group_documents_are_symmetrised(self):
        from vrdre.core import BBox, Document, Entity, Segment

        box = BBox(0, 0, 10, 10)
        segs = [Segment(k, [f"w{k}"], box, [box]) for k in range(3)]
        ents = [Entity(k, (k, 0, 0), "menu.nm", group_id=k // 2) for k in range(3)]
        doc = Document("g", segs, ents, [], RelationKind.GROUP)
        cfg = tiny_config(dataset={"name": "CORD", "root": "/nonexistent"})
        model = RelationModel(cfg, ("menu.nm", "other"), torch.Generator().manual_seed(0))
        _, preds = evaluate(model, [doc])
        pairs = preds["g"].pairs()
        assert pairs == {(b, a) for a, b in pairs}
