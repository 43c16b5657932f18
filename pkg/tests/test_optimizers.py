import pytest

from progbench.lm import CostLedger, ScriptedLM
from progbench.optimizers import (PRESETS, OptimizerConfig, bootstrap_fewshot, bootstrap_random_search,
                                  first_max, induce_rules, load_optimized, mipro, optimizer_config,
                                  parse_rules, propose_instructions, rule_infer, run_optimizer)
from progbench.core import ContractError
from progbench.programs import build_program

from conftest import QA, make_lm
from synthetic import (EM, GRID_ARGMAX, GRID_SCORES, MAGIC, examples, grid_lm, inducer_calls, live_question,
                       magic_lm, rule_lm, subset_teacher)


def predict():
    return build_program("predict", QA)


def demo_questions(prog, module="predict"):
    return [d.values["question"] for d in prog.predictors[module].demos]


class TestBootstrap:
    def test_only_passing_traces_in_order(self):
        train = examples("t", 4)
        _, lm = subset_teacher({"t0", "t1", "t3"})
        cfg = OptimizerConfig(max_bootstrapped_demos=4, max_labeled_demos=0)
        prog = bootstrap_fewshot(predict(), train, EM, cfg, lm).program
        assert demo_questions(prog) == ["t0", "t1", "t3"]
        assert all(d.origin == "bootstrapped" for d in prog.predictors["predict"].demos)

    def test_cap(self):
        _, lm = subset_teacher({"t0", "t1", "t3"})
        cfg = OptimizerConfig(max_bootstrapped_demos=2, max_labeled_demos=0)
        assert demo_questions(bootstrap_fewshot(predict(), examples("t", 4), EM, cfg, lm).program) == ["t0", "t1"]

    def test_labeled_topup_uses_unbootstrapped(self):
        _, lm = subset_teacher({"t1"})
        cfg = OptimizerConfig(max_bootstrapped_demos=4, max_labeled_demos=2)
        prog = bootstrap_fewshot(predict(), examples("t", 4), EM, cfg, lm).program
        demos = prog.predictors["predict"].demos
        assert [(d.values["question"], d.origin) for d in demos] == [
            ("t1", "bootstrapped"), ("t0", "labeled"), ("t2", "labeled")]

    def test_empty_trainset_unchanged(self):
        _, lm = subset_teacher(set())
        prog = predict()
        out = bootstrap_fewshot(prog, [], EM, OptimizerConfig(max_labeled_demos=0), lm).program
        assert out.state() == prog.state()

    def test_spend_goes_to_optimization_phase(self):
        ledger = CostLedger()
        backend, _ = subset_teacher({"t0"})
        bootstrap_fewshot(predict(), examples("t", 3), EM, OptimizerConfig(), make_lm(backend, ledger=ledger))
        snap = ledger.snapshot()
        assert snap["optimization"].calls == 3 and snap["evaluation"].calls == 0

    def test_multi_module_demos(self):
        prog = build_program("cot_based_vote", QA, {"voters": 2})

        def fn(req):
            return "Reasoning: r\n" + ("Answer: ans-" + live_question(req.prompt))
        from progbench.lm import FunctionalLM
        out = bootstrap_fewshot(prog, examples("t", 3), EM, OptimizerConfig(max_bootstrapped_demos=2,
                                                                           max_labeled_demos=0),
                                make_lm(FunctionalLM(fn))).program
        assert demo_questions(out, "vote") == ["t0", "t1"]
        assert demo_questions(out, "consolidate") == ["t0", "t1"]
        assert "votes" in out.predictors["consolidate"].demos[0].values


class TestRandomSearch:
    def test_magic_demo_wins(self):
        train = examples("t", 5) + [MAGIC]
        val = examples("v", 4, "validation")
        cfg = OptimizerConfig(num_candidates=4, max_labeled_demos=2)
        res = bootstrap_random_search(predict(), train, val, EM, cfg, make_lm(magic_lm()))
        assert res.validation_score == 1.0
        assert "magic" in demo_questions(res.program)
        scores = [c.score for c in res.candidates]
        assert scores[:2] == [0.0, 0.0] and res.candidates[first_max(scores)].score == 1.0
        assert all(res.validation_score >= s for s in scores)

    def test_two_candidates(self):
        res = bootstrap_random_search(predict(), examples("t", 3), examples("v", 2), EM,
                                      OptimizerConfig(num_candidates=2), make_lm(magic_lm()))
        assert [c.provenance for c in res.candidates] == ["zero-shot", "labeled-only"]

    def test_first_max(self):
        assert first_max([0.5, 0.8, 0.8]) == 1
        assert first_max([0.0]) == 0

    def test_needs_valset(self):
        with pytest.raises(ContractError):
            bootstrap_random_search(predict(), [], [], EM, OptimizerConfig(), make_lm(magic_lm()))

    def test_deterministic_serialization(self, tmp_path):
        train = examples("t", 5) + [MAGIC]

        def once():
            return bootstrap_random_search(predict(), train, examples("v", 3), EM,
                                           OptimizerConfig(num_candidates=5, seed=3), make_lm(magic_lm())).to_json()
        assert once() == once()


class TestPropose:
    def test_counts_and_original_first(self):
        backend = ScriptedLM(default="Proposed Instruction: I1")
        prog = build_program("gen_critic_ranker", QA, {"n_candidates": 1})
        cands = propose_instructions(prog, [], make_lm(backend), 3)
        assert set(cands) == {"generate", "critic", "ranker"}
        assert backend.calls == 3 * 2
        assert cands["generate"] == [QA.instruction, "I1", "I1"]

    def test_two_module_program(self):
        backend = ScriptedLM(default="Proposed Instruction: I1")
        prog = build_program("rag_based_rank", QA, corpus=__import__("progbench").build_index([("a", "x")]))
        propose_instructions(prog, [], make_lm(backend), 3)
        assert backend.calls == 2 * 2

    def test_twelve(self):
        cands = propose_instructions(predict(), [], make_lm(ScriptedLM(default="Proposed Instruction: I1")), 12)
        assert len(cands["predict"]) == 12

    def test_unparseable_slot_reuses_original(self):
        cands = propose_instructions(predict(), [], make_lm(ScriptedLM(default="")), 2)
        assert cands["predict"] == [QA.instruction, QA.instruction]


class TestMipro:
    def test_grid_argmax(self):
        train = examples("t", 3)
        val = [e for e in examples("v", 4, "validation")]
        cfg = OptimizerConfig(num_candidates=2, num_trials=4, max_bootstrapped_demos=0, max_labeled_demos=1)
        res = mipro(predict(), train, val, EM, cfg, make_lm(grid_lm()))
        assert res.validation_score == GRID_SCORES[GRID_ARGMAX]
        inst, demos = GRID_ARGMAX
        p = res.program.predictors["predict"]
        assert (p.instruction == "I1") == bool(inst)
        assert bool(p.demos) == bool(demos)
        assert all(res.validation_score >= c.score for c in res.candidates)

    def test_zero_trials(self):
        prog = predict()
        res = mipro(prog, examples("t", 2), examples("v", 2), EM, OptimizerConfig(num_trials=0),
                    make_lm(grid_lm()))
        assert res.program is prog

    def test_sampled_path_deterministic(self):
        cfg = OptimizerConfig(num_candidates=3, num_trials=6, batch_size=2, batch_full_eval_steps=2,
                              max_bootstrapped_demos=0, max_labeled_demos=1, exhaustive_fallback=False, seed=5)

        def once():
            return mipro(predict(), examples("t", 3), examples("v", 4), EM, cfg, make_lm(grid_lm())).to_json()
        a = once()
        assert a == once()

    def test_presets(self):
        lite = PRESETS["mipro_lite"]
        assert (lite.num_trials, lite.max_bootstrapped_demos, lite.max_labeled_demos) == (20, 4, 2)
        full = PRESETS["mipro"]
        assert (full.num_candidates, full.num_trials, full.batch_size, full.batch_full_eval_steps) == (12, 50, 35, 5)


class TestRules:
    def test_parse(self):
        lm = make_lm(ScriptedLM(default="Rules: 1. Be terse\n2. Cite units"))
        demos = examples("t", 1)
        assert induce_rules(demos, "inst", lm, 2) == ["Be terse", "Cite units"]
        assert induce_rules(demos, "inst", lm, 1) == ["Be terse"]
        assert induce_rules(demos, "inst", make_lm(ScriptedLM(default="Rules: be nice overall")), 5) == []
        assert parse_rules("1) a\n 2. b\nc", 9) == ["a", "b"]

    def test_needs_demos(self):
        with pytest.raises(ContractError):
            induce_rules([], "i", make_lm(ScriptedLM()), 3)

    def _run(self, scores, baseline, n=3):
        backend = rule_lm(scores, baseline)
        cfg = OptimizerConfig(num_candidates=n, num_rules=5, max_bootstrapped_demos=2, max_labeled_demos=0)
        res = rule_infer(predict(), examples("t", 2), examples("v", 4), EM, cfg, make_lm(backend))
        return res, backend

    def test_candidate_two_kept(self):
        res, backend = self._run({"rule1": 0.25, "rule2": 0.75, "rule3": 0.5}, baseline=0.25)
        assert res.program.predictors["predict"].rules == ("rule2",)
        assert res.validation_score == 0.75
        assert [c.score for c in res.candidates] == [0.25, 0.25, 0.75, 0.5]
        assert inducer_calls(backend) == 3

    def test_no_strict_improvement_returns_fewshot(self):
        res, _ = self._run({"rule1": 0.5, "rule2": 0.25}, baseline=0.5, n=2)
        assert res.program.predictors["predict"].rules == ()
        assert demo_questions(res.program) == ["t0", "t1"]
        assert res.validation_score == 0.5

    def test_presets(self):
        lite, full = PRESETS["rule_infer_lite"], PRESETS["rule_infer"]
        assert (lite.num_rules, full.num_rules) == (10, 20)
        assert lite.num_candidates == full.num_candidates == 10


class TestDispatch:
    def test_none(self):
        prog = predict()
        assert run_optimizer("none", prog, [], [], EM, make_lm(ScriptedLM())).program is prog

    def test_unknown(self):
        with pytest.raises(KeyError):
            optimizer_config("sgd")
        with pytest.raises(ValueError):
            optimizer_config("mipro", {"bogus": 1})

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(num_candidates=0)
        with pytest.raises(ValueError):
            OptimizerConfig(max_errors=-1)

    def test_save_and_load(self, tmp_path):
        _, lm = subset_teacher({"t0"})
        res = run_optimizer("bootstrap_fewshot", predict(), examples("t", 2), [], EM, lm)
        path = res.save(tmp_path / "p.json")
        loaded = load_optimized(path, predict())
        assert loaded.state() == res.program.state()
        assert res.optimizer == "bootstrap_fewshot"
