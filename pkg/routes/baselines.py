"""
Módulo de Líneas Base de Evidencia Fija
Políticas de selección de frames (low-FPS, screenshot, recency, proxy de ventana de evento)
puntuadas contra un oráculo de cobertura sobre ventanas de evento
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import click
import pandas as pd
from flask import Blueprint
from joblib import Parallel, delayed

from routes.errors import BaselineError, CommandError, ReusoError, SchemaError
from routes.records import emit, read_json, render_table, resolve_option, run_config

baselines_bp = Blueprint('baselines', __name__, cli_group=None)

# Configurar logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

MATCH = 'Match'
MISS = 'Miss'


@dataclass(frozen=True)
class EventSpec:
    event_id: str
    stream_length: int
    window: Tuple[int, int]  # [a, b] inclusive
    query_time: int
    min_coverage: int = 1

    def __post_init__(self):
        a, b = self.window
        if not 0 <= a <= b < self.stream_length:
            raise BaselineError(f"Evento {self.event_id}: ventana [{a}, {b}] fuera del stream")
        if not b <= self.query_time < self.stream_length:
            raise BaselineError(f"Evento {self.event_id}: query_time {self.query_time} inválido")
        if self.min_coverage < 1:
            raise BaselineError(f"Evento {self.event_id}: min_coverage debe ser >= 1")


@dataclass(frozen=True)
class DetectorJitter:
    """Ventana detectada = verdad desplazada offset frames y ensanchada stretch por lado"""
    offset: int = 0
    stretch: int = 0

    def window_for(self, event: EventSpec) -> Tuple[int, int]:
        a, b = event.window
        qt = event.query_time
        lo = min(qt, max(0, a + self.offset - self.stretch))
        hi = min(qt, max(0, b + self.offset + self.stretch))
        return lo, hi


def _uniform(lo: int, hi: int, n: int) -> List[int]:
    # redondeo half-up y sin duplicados
    if n == 1:
        return [hi]
    return sorted({int(lo + i * (hi - lo) / (n - 1) + 0.5) for i in range(n)})


@dataclass(frozen=True)
class LowFpsDense:
    n: int = 4
    name: str = 'low-fps-dense'

    def select(self, event: EventSpec, detector_window=None) -> List[int]:
        return _uniform(0, event.query_time, self.n)


@dataclass(frozen=True)
class Screenshot:
    name: str = 'screenshot'

    def select(self, event: EventSpec, detector_window=None) -> List[int]:
        return [event.query_time]


@dataclass(frozen=True)
class RecencyLastK:
    k: int = 4
    name: str = 'recency-last-k'

    def select(self, event: EventSpec, detector_window=None) -> List[int]:
        return list(range(max(0, event.query_time - self.k + 1), event.query_time + 1))


@dataclass(frozen=True)
class EventWindowProxy:
    n: int = 4
    name: str = 'event-window-proxy'

    def select(self, event: EventSpec, detector_window: Optional[Tuple[int, int]] = None) -> List[int]:
        if detector_window is None:
            raise BaselineError(f"El proxy necesita una ventana detectada para {event.event_id}")
        lo, hi = detector_window
        if hi < lo:
            raise BaselineError(f"Ventana detectada vacía para {event.event_id}: [{lo}, {hi}]")
        return _uniform(lo, hi, self.n)


def default_policies() -> List:
    return [LowFpsDense(4), Screenshot(), RecencyLastK(4), EventWindowProxy(4)]


def select_frames(policy, event: EventSpec,
                  detector_window: Optional[Tuple[int, int]] = None) -> List[int]:
    for counter in ('n', 'k'):
        if getattr(policy, counter, 1) < 1:
            raise BaselineError(f"{policy.name}: el conteo debe ser >= 1")
    return policy.select(event, detector_window)


def score_event(selected: Sequence[int], event: EventSpec) -> str:
    if not selected:
        raise BaselineError(f"Selección vacía para {event.event_id}")
    a, b = event.window
    covered = sum(1 for i in set(selected) if a <= i <= b)
    return MATCH if covered >= event.min_coverage else MISS


def _score_all(event: EventSpec, policies: Sequence, jitter: DetectorJitter) -> Dict[str, str]:
    window = jitter.window_for(event)
    return {p.name: score_event(select_frames(p, event, window), event) for p in policies}


def competition_rank(counts: Dict[str, int]) -> Dict[str, int]:
    """Rango de competencia: los empates comparten el mejor rango"""
    return {name: 1 + sum(1 for other in counts.values() if other > value)
            for name, value in counts.items()}


def _check_unique(policies: Sequence) -> None:
    names = [p.name for p in policies]
    repeated = sorted({n for n in names if names.count(n) > 1})
    if repeated:
        raise BaselineError(f"Política repetida en la tabla: {', '.join(repeated)}")


def baseline_table(events: Sequence[EventSpec], policies: Optional[Sequence] = None,
                   jitter: Optional[DetectorJitter] = None, workers: int = 1) -> pd.DataFrame:
    """Conteos de Match por política, sumados evento a evento, con su rango"""
    if not events:
        raise BaselineError("El corpus no tiene eventos")
    policies = list(policies) if policies else default_policies()
    _check_unique(policies)
    jitter = jitter or DetectorJitter()
    outcomes = Parallel(n_jobs=workers, prefer='threads')(
        delayed(_score_all)(event, policies, jitter) for event in events
    )
    counts = {p.name: sum(1 for o in outcomes if o[p.name] == MATCH) for p in policies}
    ranks = competition_rank(counts)
    total = len(events)
    return pd.DataFrame([
        {'policy': p.name, 'matches': counts[p.name], 'events': total,
         'match_rate': round(counts[p.name] / total, 4), 'rank': ranks[p.name]}
        for p in policies
    ], columns=['policy', 'matches', 'events', 'match_rate', 'rank'])


POLICY_NAMES = {
    'low-fps-dense': LowFpsDense,
    'screenshot': Screenshot,
    'recency-last-k': RecencyLastK,
    'event-window-proxy': EventWindowProxy,
}


def parse_policies(text: str) -> List:
    """'all' o lista separada por comas; low-fps-dense:8 fija el conteo"""
    if text.strip() == 'all':
        return default_policies()
    policies = []
    for part in text.split(','):
        name, _, arg = part.strip().partition(':')
        if name not in POLICY_NAMES:
            raise BaselineError(f"Política de selección desconocida: {name}")
        cls = POLICY_NAMES[name]
        if arg:
            if cls is Screenshot:
                raise BaselineError("screenshot no acepta conteo")
            try:
                count = int(arg)
            except ValueError:
                raise BaselineError(f"Conteo inválido en '{part}'")
            field_name = 'k' if cls is RecencyLastK else 'n'
            policies.append(cls(**{field_name: count}))
        else:
            policies.append(cls())
    _check_unique(policies)
    return policies


def load_events(path: str) -> Tuple[List[EventSpec], Optional[DetectorJitter]]:
    """Corpus JSON: lista de eventos o {events, detector_jitter}"""
    data = read_json(path)
    jitter = None
    if isinstance(data, dict):
        if 'detector_jitter' in data:
            jitter = jitter_from_dict(data['detector_jitter'])
        data = data.get('events')
    if not isinstance(data, list):
        raise SchemaError(f"{path}: se esperaba una lista de eventos")
    events = []
    for i, item in enumerate(data):
        try:
            events.append(EventSpec(
                event_id=str(item.get('event_id', f"e{i:02d}")),
                stream_length=int(item['stream_length']),
                window=(int(item['window'][0]), int(item['window'][1])),
                query_time=int(item['query_time']),
                min_coverage=int(item.get('min_coverage', 1)),
            ))
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise SchemaError(f"Evento {i} inválido: {str(e)}")
    return events, jitter


def jitter_from_dict(data: Dict) -> DetectorJitter:
    try:
        return DetectorJitter(offset=int(data.get('offset', 0)), stretch=int(data.get('stretch', 0)))
    except (AttributeError, TypeError, ValueError) as e:
        raise SchemaError(f"detector_jitter inválido: {str(e)}")


@baselines_bp.cli.command('baseline')
@click.option('--events', 'events_path', required=True, help='Corpus JSON de eventos')
@click.option('--policies', 'policies_text', default='all')
@click.option('--detector-jitter', 'jitter_path', default=None,
              help='JSON {offset, stretch}; reemplaza el del corpus')
@click.option('--format', 'fmt', type=click.Choice(['md', 'csv', 'json']), default=None)
@click.option('--workers', type=int, default=None)
@click.option('--out', default=None)
def baseline_command(events_path, policies_text, jitter_path, fmt, workers, out):
    """Tabla de coincidencias por política de selección."""
    try:
        events, jitter = load_events(events_path)
        if jitter_path:
            jitter = jitter_from_dict(read_json(jitter_path))
        jitter = jitter or DetectorJitter()
        policies = parse_policies(policies_text)
        table = baseline_table(events, policies, jitter, resolve_option(workers, 'WORKERS'))

        if fmt is None:
            fmt = 'csv' if out and out.endswith('.csv') else 'md'
        inputs = [p for p in (events_path, jitter_path) if p]
        run = run_config('baseline', inputs=inputs, outputs=[out], policies=policies_text,
                         offset=jitter.offset, stretch=jitter.stretch)
        emit(render_table(table, fmt, run), out)
        logger.info(f"Tabla de líneas base sobre {len(events)} eventos")
    except ReusoError as e:
        logger.error(f"Error en comando baseline: {str(e)}")
        raise CommandError(str(e))
