import json

import pytest

from routes.drift import OPEN_ENDED, PARSE_FAIL, AttractorSet, drift_report, join_session_logs
from routes.errors import ConfigurationError, SessionError
from routes.records import read_json
from routes.session import (
    Action,
    AdaptiveRepair,
    AnswerOracle,
    BasinModel,
    CacheSource,
    ColdDense,
    FixedK,
    LatencyModel,
    Policy,
    QuerySchedule,
    QuestionSpec,
    RawWarmReuse,
    ScheduledRefresh,
    all_query_speedup,
    backsolve_q1,
    cohort_summary,
    cycle_schedule,
    economics_row,
    latency_from_dict,
    parse_policy,
    prompt_frame_throughput,
    run_cohort,
    run_session,
    schedules_from_dict,
    session_speedup,
    throughput_summary,
    warm_speedup,
)

QUESTIONS = [QuestionSpec('q0', 'A'), QuestionSpec('q1', 'B'), QuestionSpec('q2', 'C')]


class FailedAdaptive(AdaptiveRepair):
    """Repara en el primer follow-up y luego vuelve al estado sin reparar"""
    name = 'failed-adaptive'

    def action(self, followup, state):
        if followup % 3 == 1:
            return Action(CacheSource.REPAIRED, 1)
        return Action(CacheSource.RAW_REUSED)


class InheritFirst(Policy):
    name = 'inherit-first'

    def action(self, followup, state):
        return Action(CacheSource.INHERITED)


@pytest.fixture
def three_turns():
    return cycle_schedule('v', 20, QUESTIONS, 3)


def simulate(schedule, policy, latency=None, basin=None, oracle=None, seed=0):
    return run_session(schedule, policy, oracle or AnswerOracle(), latency or LatencyModel(),
                       basin or BasinModel(), seed)


@pytest.mark.parametrize('policy', [ColdDense(), RawWarmReuse(), FixedK(1), FixedK(3),
                                    AdaptiveRepair(), ScheduledRefresh(2)])
def test_first_query_pays_cold_cost(policy, three_turns):
    log = simulate(three_turns, policy)
    assert log.records[0].latency_s == 80.0
    assert log.records[0].cache_source == 'Fresh'
    assert len(log.records) == 3


def test_cold_dense_is_fresh_every_turn(three_turns):
    log = simulate(three_turns, ColdDense())
    assert [r.cache_source for r in log.records] == ['Fresh'] * 3
    assert all(r.latency_s == 80.0 for r in log.records)
    assert all(r.correct for r in log.records)


def test_fixed_k_followup_tail_and_coverage(three_turns):
    log = simulate(three_turns, FixedK(1))
    follow = log.records[1:]
    assert [r.cache_source for r in follow] == ['Repaired', 'Repaired']
    assert all(r.tail_tokens == 451 for r in follow)
    assert follow[1].latency_s == pytest.approx(6.65)
    assert follow[1].prefix_coverage == pytest.approx(7619 / 8070)
    assert follow[1].prefix_coverage == pytest.approx(0.944, abs=1e-3)
    assert follow[1].repaired_frames == 1


def test_adaptive_inherits_after_first_repair(three_turns):
    log = simulate(three_turns, AdaptiveRepair())
    assert [r.cache_source for r in log.records] == ['Fresh', 'Repaired', 'Inherited']
    second = log.records[2]
    assert second.tail_tokens == 50
    assert second.latency_s == pytest.approx(0.675)
    assert second.prefix_coverage == pytest.approx(0.994, abs=1e-3)
    assert second.repaired_frames == 0


def test_second_followup_speedup_and_tail_reduction(three_turns):
    fixed = simulate(three_turns, FixedK(1)).records[2]
    adaptive = simulate(three_turns, AdaptiveRepair()).records[2]
    assert warm_speedup(fixed.latency_s, adaptive.latency_s) == pytest.approx(9.85, abs=0.01)
    assert (1 - adaptive.tail_tokens / fixed.tail_tokens) * 100 == pytest.approx(88.9, abs=0.05)


def test_adaptive_never_slower_than_fixed_k():
    schedule = cycle_schedule('v', 20, QUESTIONS, 12)
    fixed = simulate(schedule, FixedK(1)).records
    adaptive = simulate(schedule, AdaptiveRepair()).records
    for turn, (f, a) in enumerate(zip(fixed, adaptive)):
        assert a.latency_s <= f.latency_s
        if turn >= 2:
            assert a.latency_s < f.latency_s


def test_fixed_k_zero_is_raw_reuse(three_turns):
    raw = simulate(three_turns, RawWarmReuse())
    k0 = simulate(three_turns, FixedK(0))
    assert [r.cache_source for r in k0.records] == [r.cache_source for r in raw.records]
    assert [r.latency_s for r in k0.records] == [r.latency_s for r in raw.records]


def test_raw_reuse_enters_basin_past_depth_threshold(three_turns):
    log = simulate(three_turns, RawWarmReuse())
    follow = log.records[1:]
    assert all(r.pathological for r in follow)
    assert all(r.choice == PARSE_FAIL and not r.correct for r in follow)
    assert follow[0].raw_text.startswith('自动生成')
    assert follow[1].raw_text.startswith('addCriterion')


def test_raw_reuse_below_threshold_is_clean():
    log = simulate(cycle_schedule('v', 10, QUESTIONS, 3), RawWarmReuse())
    assert not any(r.pathological for r in log.records)
    assert all(r.correct for r in log.records)


def test_basin_can_be_disabled(three_turns):
    log = simulate(three_turns, RawWarmReuse(), basin=BasinModel(enabled=False))
    assert not any(r.pathological for r in log.records)


def test_enabled_basin_requires_attractors():
    with pytest.raises(ConfigurationError):
        BasinModel(attractors=AttractorSet(strings=()))


def test_probabilistic_basin_is_seeded():
    schedule = cycle_schedule('v', 20, QUESTIONS, 30)
    basin = BasinModel(pathology_mode='probabilistic', pathology_probability=0.5)
    a = simulate(schedule, RawWarmReuse(), basin=basin, seed=3)
    b = simulate(schedule, RawWarmReuse(), basin=basin, seed=3)
    assert a == b
    flags = [r.pathological for r in a.records[1:]]
    assert any(flags) and not all(flags)


def test_failed_adaptive_collapses_every_third_query():
    schedules = [cycle_schedule(f"f{i}", 20, QUESTIONS, 3) for i in range(7)]
    failed = run_cohort(schedules, FailedAdaptive(), AnswerOracle(), LatencyModel(), BasinModel())
    pathological = [(log.video_id, r.turn) for log in failed for r in log.records if r.pathological]
    assert len(pathological) == 7
    assert all(turn == 2 for _, turn in pathological)

    adaptive = run_cohort(schedules, AdaptiveRepair(), AnswerOracle(), LatencyModel(), BasinModel())
    assert cohort_summary(adaptive).pathological == 0


def test_inheriting_without_repair_is_rejected(three_turns):
    with pytest.raises(SessionError):
        simulate(three_turns, InheritFirst())


def test_repair_larger_than_prompt_is_rejected():
    with pytest.raises(SessionError):
        simulate(cycle_schedule('v', 2, QUESTIONS, 2), FixedK(3))


def test_scheduled_refresh_turns():
    schedule = cycle_schedule('v', 20, QUESTIONS, 51)
    log = simulate(schedule, ScheduledRefresh(10))
    repaired = [r.turn for r in log.records if r.cache_source == 'Repaired']
    assert repaired == [1, 10, 20, 30, 40, 50]
    assert all(r.cache_source == 'Inherited' for r in log.records[2:] if r.turn not in repaired)


def test_many_turn_cohort_counts(fixture_path):
    schedules = schedules_from_dict(read_json(fixture_path('schedules_many_turn.json')))
    refresh = cohort_summary(run_cohort(schedules, ScheduledRefresh(10), AnswerOracle(),
                                        LatencyModel(), BasinModel()))
    assert refresh.n_followups == 343
    assert refresh.repair_followups == 35
    assert refresh.post_repair_followups == 308
    adaptive = cohort_summary(run_cohort(schedules, AdaptiveRepair(), AnswerOracle(),
                                         LatencyModel(), BasinModel()))
    assert (adaptive.repair_followups, adaptive.post_repair_followups) == (7, 336)
    assert adaptive.pathological == 0


def test_breadth_cohort_matches_cold_baseline(fixture_path):
    schedules = schedules_from_dict(read_json(fixture_path('schedules_breadth.json')))
    cold = run_cohort(schedules, ColdDense(), AnswerOracle(), LatencyModel(), BasinModel())
    adaptive = run_cohort(schedules, AdaptiveRepair(), AnswerOracle(), LatencyModel(), BasinModel())
    summary = cohort_summary(adaptive)
    assert (summary.n_queries, summary.n_followups) == (93, 62)

    rows = join_session_logs([r for log in cold for r in log.to_records()],
                             [r for log in adaptive for r in log.to_records()])
    report = drift_report(rows)
    assert (report.n_rows, report.choice_diffs, report.correctness_diffs) == (93, 0, 0)
    assert report.gate_pass
    assert report.rule_of_three == pytest.approx(3 / 93)


def test_empty_cohort_gives_empty_summary():
    assert run_cohort([], AdaptiveRepair(), AnswerOracle(), LatencyModel(), BasinModel()) == []
    summary = cohort_summary([])
    assert summary.n_sessions == 0 and summary.followup_median is None


def test_cohort_is_deterministic_across_workers():
    schedules = [cycle_schedule(f"d{i}", 20, QUESTIONS, 6) for i in range(5)]
    latency = LatencyModel(jitter_sigma=0.2)
    oracle = AnswerOracle(flip_rates={'Inherited': 0.3})
    serial = run_cohort(schedules, AdaptiveRepair(), oracle, latency, BasinModel(), seed=9)
    threaded = run_cohort(schedules, AdaptiveRepair(), oracle, latency, BasinModel(), seed=9, workers=3)
    assert json.dumps([log.to_records() for log in serial]) == \
        json.dumps([log.to_records() for log in threaded])


def test_oracle_flip_changes_choice():
    oracle = AnswerOracle(flip_rates={'Inherited': 1.0})
    log = simulate(cycle_schedule('v', 20, QUESTIONS, 3), AdaptiveRepair(), oracle=oracle)
    last = log.records[2]
    assert last.choice in {'A', 'B', 'D'}
    assert not last.correct
    assert log.records[1].correct


def test_open_ended_revision_is_text_only():
    questions = [QuestionSpec('open', 'a red car', n_options=0)]
    oracle = AnswerOracle(flip_rates={'Repaired': 1.0})
    log = simulate(cycle_schedule('v', 20, questions, 2), FixedK(1), oracle=oracle)
    assert log.records[0].raw_text == 'a red car'
    assert log.records[1].raw_text == 'a red car [revised]'
    assert log.records[1].choice == OPEN_ENDED
    assert not log.records[1].correct


def test_oracle_rejects_unknown_source():
    with pytest.raises(ConfigurationError):
        AnswerOracle(flip_rates={'Warm': 0.5})


def test_dense_anchor_extends_tail():
    schedule = cycle_schedule('v', 20, QUESTIONS, 3, dense_anchor=True)
    log = simulate(schedule, FixedK(1))
    assert log.records[0].tail_tokens == 20 * 401 + 50
    assert log.records[1].tail_tokens == 451 + 16


def test_latency_calibration_from_attribution_points(fixture_path):
    data = read_json(fixture_path('timing.json'))
    model = latency_from_dict({'calibration': data['calibration']})
    assert model.t_text == pytest.approx(0.675)
    assert model.followup_latency(1) == pytest.approx(6.65)
    assert model.tail_tokens(1) == 451


@pytest.mark.parametrize('kwargs', [{'t_text': 0.0}, {'t_cold': 0.5, 't_text': 1.0},
                                    {'jitter_sigma': -1.0}])
def test_invalid_latency_model(kwargs):
    with pytest.raises(ConfigurationError):
        LatencyModel(**kwargs)


def test_warm_and_all_query_speedups():
    assert warm_speedup(6.65, 6.65) == 1.0
    assert warm_speedup(38.0, 0.807) == pytest.approx(47.1, abs=0.05)
    assert all_query_speedup(80.0, 0.8) == pytest.approx(100.0)
    with pytest.raises(SessionError):
        warm_speedup(0.0, 1.0)


def test_session_speedup_examples():
    first, warm = 1 / 1.04, 1 / 83
    assert session_speedup(2, 1.0, first, warm) == pytest.approx(2.05, abs=0.1)
    assert session_speedup(10, 1.0, first, warm) == pytest.approx(9.35, abs=0.1)
    assert session_speedup(50, 1.0, first, warm) == pytest.approx(32.2, abs=0.1)
    assert session_speedup(1, 1.0, first, warm) == pytest.approx(1.04)
    assert all(session_speedup(q, 2.0, 2.0, 2.0) == pytest.approx(1.0) for q in (1, 5, 50))


def test_session_speedup_monotone_with_limit():
    values = [session_speedup(q, 1.0, 0.9, 0.1) for q in range(1, 200)]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert session_speedup(10 ** 7, 1.0, 0.9, 0.1) == pytest.approx(10.0, rel=1e-4)
    with pytest.raises(SessionError):
        session_speedup(0, 1.0, 1.0, 1.0)


def test_economics_cells_within_tolerance(fixture_path):
    for cell in read_json(fixture_path('economics_cells.json'))['cells']:
        row = economics_row(cell['warm'], cell['q1'], qs=(2, 5, 10, 50))
        for q, expected in cell['expected'].items():
            assert row[int(q)] == pytest.approx(expected, abs=0.1), (cell['name'], q)
        assert backsolve_q1(cell['warm'], 50, cell['expected']['50']) == \
            pytest.approx(cell['q1'], abs=5e-4)


def test_prompt_frame_throughput_examples(fixture_path):
    assert prompt_frame_throughput(32, 0.585) == pytest.approx(54.7, abs=0.05)
    assert prompt_frame_throughput(8, 0.296) == pytest.approx(27.0, abs=0.05)
    assert prompt_frame_throughput(8, 8.0) == 1.0

    item = read_json(fixture_path('timing.json'))['throughput'][1]
    summary = throughput_summary(item['n_frames'], item['warm_latencies'], item['threshold_fps'])
    assert summary['median_fps'] == pytest.approx(54.68, abs=0.01)
    assert summary['at_or_above'] == 19
    assert summary['min_fps'] == pytest.approx(23.85, abs=0.01)


@pytest.mark.parametrize('text,name', [('cold', 'cold'), ('raw', 'raw'), ('adaptive', 'adaptive'),
                                       ('fixed-k:2', 'fixed-k:2'), ('refresh:10', 'refresh:10'),
                                       ('fixed-k', 'fixed-k:1')])
def test_parse_policy(text, name):
    assert parse_policy(text).name == name


@pytest.mark.parametrize('text', ['warm', 'fixed-k:x', 'refresh:0', 'cold:1', 'fixed-k:-1'])
def test_parse_policy_rejects(text):
    with pytest.raises(ConfigurationError):
        parse_policy(text)


def test_schedule_requires_turns():
    with pytest.raises(SessionError):
        QuerySchedule('v', 20, ())


def test_simulate_command_writes_session_log(runner, tmp_path, fixture_path):
    out = tmp_path / 'adaptive.jsonl'
    args = ['simulate', '--schedules', fixture_path('schedules_breadth.json'),
            '--policy', 'adaptive', '--seed', '1', '--out', str(out)]
    result = runner.invoke(args=args)
    assert result.exit_code == 0, result.output
    records = [json.loads(l) for l in out.read_text().splitlines()]
    assert records[0]['record'] == 'header' and records[0]['seed'] == 1
    turns = [r for r in records if r['record'] == 'turn']
    assert len(turns) == 93
    assert {'turn', 'policy', 'cache_source', 'raw_text', 'choice', 'correct', 'latency_s',
            'tail_tokens', 'prefix_coverage'} <= set(turns[0])
    assert records[-1]['record'] == 'summary'
    assert records[-1]['repair_followups'] == 31

    first = out.read_text()
    runner.invoke(args=args)
    assert out.read_text() == first


def test_simulate_command_unknown_policy(runner, fixture_path):
    result = runner.invoke(args=['simulate', '--schedules', fixture_path('schedules_breadth.json'),
                                 '--policy', 'warm'])
    assert result.exit_code == 2
