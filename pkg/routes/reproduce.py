"""
Módulo de Reproducción
Regenera las celdas publicadas (techo, economía de sesión, sparse medido, frontera, deriva y
timing) desde los fixtures incluidos y las compara con sus valores esperados
"""

import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, List

import click
import numpy as np
import pandas as pd
from flask import Blueprint, current_app

from routes.ceiling import ceiling_report, cell_from_dict, multi_stage_e2e, residual, scatterback_pred
from routes.drift import (
    AttractorSet,
    cache_correctness_diff,
    drift_report,
    jaccard,
    join_session_logs,
    paired_rows_from_dict,
    rule_of_three,
)
from routes.errors import CommandError, ReusoError, SchemaError
from routes.planner import backsolve_reuse, effective_fresh, frontier_relation
from routes.records import emit, read_json, render_table, run_config
from routes.session import (
    AdaptiveRepair,
    AnswerOracle,
    BasinModel,
    FixedK,
    LatencyModel,
    QuestionSpec,
    cohort_summary,
    cycle_schedule,
    economics_row,
    parse_policy,
    run_cohort,
    schedules_from_dict,
    throughput_summary,
)

reproduce_bp = Blueprint('reproduce', __name__, cli_group='reproduce')

# Configurar logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DRIFT_FIXTURES = (
    'drift_breadth.json',
    'drift_fixed_k.json',
    'drift_dense_anchored.json',
    'drift_basin.json',
    'drift_dense_anchored_fixed_k.json',
    'drift_low_fps_control.json',
)
CACHE_FIXTURES = ('cache_correctness_default.json', 'cache_correctness_patched.json')


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    expected: float
    observed: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.observed - self.expected) <= self.tolerance + 1e-12

    def to_row(self) -> Dict:
        return {
            'suite': self.suite,
            'check': self.name,
            'expected': self.expected,
            'observed': round(float(self.observed), 6),
            'tolerance': self.tolerance,
            'status': 'ok' if self.passed else 'DIFF',
        }


def _fixture(fixture_dir: str, name: str):
    return read_json(os.path.join(fixture_dir, name))


def reproduce_ceiling(fixture_dir: str, prediction_tol: float = 0.001,
                      residual_tol_pp: float = 0.15) -> List[Check]:
    data = _fixture(fixture_dir, 'ceiling_cells.json')
    checks = []
    cells = [cell_from_dict(item) for item in data['cells']]
    report = ceiling_report(cells, tolerance_pp=5.0)
    for item, row in zip(data['cells'], report.rows):
        checks.append(Check('ceiling', f"{row.name} pred", item['printed_pred'], row.predicted,
                            prediction_tol))
        checks.append(Check('ceiling', f"{row.name} residual_pp", item['printed_residual_pp'],
                            row.residual_pp, residual_tol_pp))
    checks.extend(reproduce_composition(fixture_dir, prediction_tol, residual_tol_pp))
    return checks


def reproduce_composition(fixture_dir: str, prediction_tol: float = 0.001,
                          residual_tol_pp: float = 0.15) -> List[Check]:
    """
    Celdas de composición expresadas como etapas (share, V_red): la predicción apilada debe
    coincidir con la impresa y, con una sola etapa, con la fórmula scatter-back
    """
    data = _fixture(fixture_dir, 'composition_cells.json')
    checks = []
    for item in data['cells']:
        stages = [(s['share'], 1.0 / (1.0 - s['v_red'])) for s in item['stages']]
        predicted = multi_stage_e2e(item['f_fixed'], stages)
        name = item['name']
        checks.append(Check('ceiling', f"{name} stacked pred", item['printed_pred'], predicted,
                            prediction_tol))
        checks.append(Check('ceiling', f"{name} stacked residual_pp", item['printed_residual_pp'],
                            residual(item['observed'], predicted), residual_tol_pp))
        if len(item['stages']) == 1:
            stage = item['stages'][0]
            checks.append(Check('ceiling', f"{name} stacked = scatter-back",
                                scatterback_pred(stage['share'], stage['v_red']), predicted, 1e-9))
    return checks


def reproduce_sparse(fixture_dir: str, prediction_tol: float = 0.001) -> List[Check]:
    """Celdas sparse medidas: v_share despejado en [0, 1] y residual reproducido"""
    data = _fixture(fixture_dir, 'measured_sparse.json')
    checks = []
    for item in data['cells']:
        cell = cell_from_dict(item)
        predicted = scatterback_pred(cell.v_share, cell.v_red)
        checks.append(Check('sparse', f"{cell.name} residual_x", item['residual_x'],
                            residual(cell.observed, predicted) / 100.0, prediction_tol))
        checks.append(Check('sparse', f"{cell.name} v_share in [0,1]", 1.0,
                            float(0.0 <= cell.v_share <= 1.0), 0.0))
        if 'printed_pred' in item:
            checks.append(Check('sparse', f"{cell.name} pred", item['printed_pred'], predicted,
                                prediction_tol))
    return checks


def reproduce_economics(fixture_dir: str, tolerance: float = 0.1) -> List[Check]:
    data = _fixture(fixture_dir, 'economics_cells.json')
    checks = []
    for item in data['cells']:
        expected = {int(q): v for q, v in item['expected'].items()}
        row = economics_row(item['warm'], item['q1'], sorted(expected))
        checks.append(Check('economics', f"{item['name']} Q=1", item['q1_printed'], item['q1'],
                            tolerance))
        for q in sorted(expected):
            checks.append(Check('economics', f"{item['name']} Q={q}", expected[q], row[q], tolerance))
    return checks


def reproduce_frontier(fixture_dir: str, tolerance: float = 0.01) -> List[Check]:
    data = _fixture(fixture_dir, 'frontier_cells.json')
    checks = []
    for item in data['cells']:
        n = int(item['n_frames'])
        r_mean = backsolve_reuse(n, item['f_eff'])
        checks.append(Check('frontier', f"{item['name']} f_eff", item['f_eff'],
                            effective_fresh(n, r_mean), tolerance))
        relation = frontier_relation(item['policy_acc'], item['f_eff'],
                                     item['comparator_acc'], item['comparator_fresh'])
        checks.append(Check('frontier', f"{item['name']} vs {item['comparator']} = {item['relation']}",
                            1.0, float(relation == item['relation']), 0.0))
    return checks


def _expected_checks(suite: str, label: str, expected: Dict, observed: Dict) -> List[Check]:
    checks = []
    for key in sorted(expected):
        value = expected[key]
        if key not in observed:
            raise SchemaError(f"{label}: métrica desconocida '{key}'")
        tol = 1e-4 if isinstance(value, float) else 0.0
        checks.append(Check(suite, f"{label} {key}", float(value), float(observed[key]), tol))
    return checks


def reproduce_drift(fixture_dir: str, gate: float = 0.03) -> List[Check]:
    attractors = AttractorSet.from_dict(_fixture(fixture_dir, 'attractors.json'))
    checks = []
    for name in DRIFT_FIXTURES:
        data = _fixture(fixture_dir, name)
        report = drift_report(paired_rows_from_dict(data), gate, attractors)
        checks.extend(_expected_checks('drift', name[:-5], data['expected'], report.to_dict()))

    for name in CACHE_FIXTURES:
        data = _fixture(fixture_dir, name)
        rows = paired_rows_from_dict(data)
        identical, choice, correct, matched = cache_correctness_diff(rows)
        observed = dict(drift_report(rows, gate, attractors).to_dict(), text_identical=identical,
                        choice_diffs=choice, correctness_diffs=correct, matched_parse_failures=matched)
        checks.extend(_expected_checks('drift', name[:-5], data['expected'], observed))

    checks.extend(reproduce_policy_drift(fixture_dir, gate, attractors))

    sets = _fixture(fixture_dir, 'drift_sets.json')
    a, b = set(sets['set_a']), set(sets['set_b'])
    checks.extend(_expected_checks('drift', 'drift_sets', sets['expected'], {
        'jaccard': jaccard(a, b), 'intersection': len(a & b), 'union': len(a | b),
    }))
    for item in sets['rule_of_three']:
        checks.append(Check('drift', f"rule_of_three({item['n']})", item['bound'],
                            rule_of_three(item['n']), 1e-4))
    return checks


def reproduce_policy_drift(fixture_dir: str, gate: float = 0.03,
                           attractors: AttractorSet = None) -> List[Check]:
    """
    Simula cada política sobre las agendas del fixture, la parea con la línea base solo en
    follow-ups y compara deriva y conteos de reparación
    """
    data = _fixture(fixture_dir, 'many_turn_policies.json')
    schedules = schedules_from_dict(_fixture(fixture_dir, data['schedules']))
    oracle, latency, basin = AnswerOracle(), LatencyModel(), BasinModel()

    def followups(policy):
        logs = run_cohort(schedules, policy, oracle, latency, basin)
        return logs, [r for log in logs for r in log.to_records() if r['turn'] > 0]

    _, baseline = followups(parse_policy(data['baseline']))
    checks = []
    for item in data['policies']:
        logs, candidate = followups(parse_policy(item['policy']))
        report = drift_report(join_session_logs(baseline, candidate), gate, attractors)
        summary = cohort_summary(logs)
        observed = dict(report.to_dict(), repair_followups=summary.repair_followups,
                        post_repair_followups=summary.post_repair_followups)
        checks.extend(_expected_checks('drift', f"many-turn {item['policy']}", item['expected'],
                                       observed))
    return checks


def second_followup_attribution(latency: LatencyModel, n_frames: int, sessions: int,
                                seed: int = 0) -> Dict[str, float]:
    """
    FixedK(1) contra AdaptiveRepair sobre agendas de tres turnos: speedup pareado del segundo
    follow-up, reducción de tokens de cola y cobertura de prefijo
    """
    questions = [QuestionSpec('q0', 'A'), QuestionSpec('q1', 'B'), QuestionSpec('q2', 'C')]
    schedules = [cycle_schedule(f"t{i:02d}", n_frames, questions, 3) for i in range(sessions)]
    oracle, basin = AnswerOracle(), BasinModel()
    fixed = run_cohort(schedules, FixedK(1), oracle, latency, basin, seed)
    adaptive = run_cohort(schedules, AdaptiveRepair(), oracle, latency, basin, seed)

    ratios = [f.records[2].latency_s / a.records[2].latency_s for f, a in zip(fixed, adaptive)]
    fixed_tail = np.median([f.records[2].tail_tokens for f in fixed])
    adaptive_tail = np.median([a.records[2].tail_tokens for a in adaptive])
    return {
        'paired_speedup': float(np.median(ratios)),
        'tail_reduction_pct': float((1.0 - adaptive_tail / fixed_tail) * 100.0),
        'coverage_fixed_k': float(np.median([f.records[2].prefix_coverage for f in fixed])),
        'coverage_adaptive': float(np.median([a.records[2].prefix_coverage for a in adaptive])),
    }


def reproduce_timing(fixture_dir: str) -> List[Check]:
    data = _fixture(fixture_dir, 'timing.json')
    points = data['calibration']
    latency = LatencyModel.calibrate(tuple(points[0]), tuple(points[1]),
                                     tokens_per_frame=data['tokens_per_frame'],
                                     question_tokens=data['question_tokens'])
    observed = second_followup_attribution(latency, data['n_frames'], data['sessions'])
    expected = data['expected']
    checks = [
        Check('timing', 'paired second follow-up speedup', expected['paired_speedup'],
              observed['paired_speedup'], expected['paired_speedup_tolerance']),
        Check('timing', 'tail-token reduction pct', expected['tail_reduction_pct'],
              observed['tail_reduction_pct'], expected['tail_reduction_tolerance_pp']),
        Check('timing', 'prefix coverage fixed K=1', expected['coverage_fixed_k'],
              observed['coverage_fixed_k'], expected['coverage_tolerance']),
        Check('timing', 'prefix coverage adaptive', expected['coverage_adaptive'],
              observed['coverage_adaptive'], expected['coverage_tolerance']),
    ]
    for item in data['throughput']:
        summary = throughput_summary(item['n_frames'], item['warm_latencies'], item['threshold_fps'])
        for key, value in sorted(item['expected'].items()):
            tol = 0.0 if isinstance(value, int) else 0.01
            checks.append(Check('timing', f"{item['name']} {key}", float(value), summary[key], tol))
    return checks


def _suites() -> Dict[str, Callable[[], List[Check]]]:
    config = current_app.config
    fixture_dir = config['FIXTURE_DIR']
    return {
        'ceiling': lambda: reproduce_ceiling(fixture_dir, config['PREDICTION_TOLERANCE'],
                                             config['RESIDUAL_REPRO_TOLERANCE_PP']),
        'economics': lambda: reproduce_economics(fixture_dir, config['ECONOMICS_TOLERANCE']),
        'sparse': lambda: reproduce_sparse(fixture_dir, config['PREDICTION_TOLERANCE']),
        'frontier': lambda: reproduce_frontier(fixture_dir),
        'drift': lambda: reproduce_drift(fixture_dir, config['DRIFT_GATE']),
        'timing': lambda: reproduce_timing(fixture_dir),
    }


def checks_frame(checks: List[Check]) -> pd.DataFrame:
    columns = ['suite', 'check', 'expected', 'observed', 'tolerance', 'status']
    return pd.DataFrame([c.to_row() for c in checks], columns=columns)


def _run(subcommand: str, names: List[str], fmt: str, out):
    ctx = click.get_current_context()
    try:
        suites = _suites()
        checks = []
        for name in names:
            checks.extend(suites[name]())
        fixture_dir = current_app.config['FIXTURE_DIR']
        run = run_config(f"reproduce {subcommand}",
                         inputs=[fixture_dir], outputs=[out])
        emit(render_table(checks_frame(checks), fmt, run), out)
    except (ReusoError, KeyError) as e:
        logger.error(f"Error en comando reproduce: {str(e)}")
        raise CommandError(f"Fixture inválido o incompleto: {str(e)}")

    failed = [c for c in checks if not c.passed]
    for check in failed:
        logger.error(f"Diferencia en {check.suite}/{check.name}: "
                     f"esperado {check.expected}, obtenido {check.observed}")
    click.echo(f"{len(checks) - len(failed)}/{len(checks)} verificaciones dentro de tolerancia",
               err=True)
    if failed:
        ctx.exit(1)


def _register(name: str, help_text: str):
    @reproduce_bp.cli.command(name, help=help_text)
    @click.option('--format', 'fmt', type=click.Choice(['md', 'csv', 'json']), default='md')
    @click.option('--out', default=None)
    def command(fmt, out):
        _run(name, [name], fmt, out)
    return command


reproduce_ceiling_command = _register('ceiling', 'Predicciones y residuales de las diez celdas de techo.')
reproduce_economics_command = _register('economics', 'Columnas Q de la economía de sesión.')
reproduce_sparse_command = _register('sparse', 'Celdas sparse medidas con v_share despejado.')
reproduce_frontier_command = _register('frontier', 'Aritmética f_eff y relación de frontera.')
reproduce_drift_command = _register('drift', 'Conteos de deriva, Jaccard y rule-of-three.')
reproduce_timing_command = _register('timing', 'Atribución de timing del segundo follow-up y throughput.')


@reproduce_bp.cli.command('all')
@click.option('--format', 'fmt', type=click.Choice(['md', 'csv', 'json']), default='md')
@click.option('--out', default=None)
def reproduce_all_command(fmt, out):
    """Ejecuta todas las suites de reproducción."""
    _run('all', ['ceiling', 'economics', 'sparse', 'frontier', 'drift', 'timing'], fmt, out)
