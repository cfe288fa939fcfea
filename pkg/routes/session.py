"""
Módulo de Sesiones con Caché
Simula políticas de reuso de caché por video (cold, raw, fixed-K, adaptive, scheduled refresh)
como máquinas de estado sobre un oráculo de respuestas y un modelo de latencia paramétrico
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import click
import numpy as np
import pandas as pd
from flask import Blueprint
from joblib import Parallel, delayed

from routes.drift import OPEN_ENDED, AttractorSet, parse_choice
from routes.errors import CommandError, ConfigurationError, ReusoError, SchemaError, SessionError
from routes.records import emit, jsonl_text, read_json, resolve_option, run_config

session_bp = Blueprint('session', __name__, cli_group=None)

# Configurar logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

OPTION_LETTERS = 'ABCDEF'


class CacheSource(Enum):
    NONE = 'None'
    FRESH = 'Fresh'
    RAW_REUSED = 'RawReused'
    REPAIRED = 'Repaired'
    INHERITED = 'Inherited'


@dataclass(frozen=True)
class QuestionSpec:
    """Pregunta de una sesión; n_options = 0 significa respuesta abierta"""
    question_id: str
    answer_key: str
    n_options: int = 4
    cold_answer: Optional[str] = None  # respuesta densa canónica; por defecto la clave
    anchored: bool = False  # el prompt incluye la respuesta densa previa

    def __post_init__(self):
        if self.n_options != 0 and not 2 <= self.n_options <= 6:
            raise SessionError(f"Pregunta {self.question_id}: n_options debe ser 0 o 2..6")

    @property
    def canonical(self) -> str:
        return self.answer_key if self.cold_answer is None else self.cold_answer

    @property
    def open_ended(self) -> bool:
        return self.n_options == 0


@dataclass(frozen=True)
class QuerySchedule:
    """Agenda de preguntas sobre un mismo video; el turno 0 es la consulta fría"""
    video_id: str
    n_frames: int
    turns: Tuple[QuestionSpec, ...]
    anchor_tokens: int = 16

    def __post_init__(self):
        if not self.turns:
            raise SessionError(f"La agenda de {self.video_id} no tiene turnos")
        if self.n_frames < 1:
            raise SessionError(f"La agenda de {self.video_id} necesita n_frames >= 1")
        if self.anchor_tokens < 0:
            raise SessionError("anchor_tokens debe ser >= 0")


@dataclass(frozen=True)
class CacheState:
    source: CacheSource = CacheSource.NONE
    depth: int = 0  # tokens de prefill representados
    age_in_turns: int = 0
    basin: bool = False


@dataclass(frozen=True)
class Action:
    """Lo que una política decide para un turno: fuente de caché resultante y frames re-prefill"""
    source: CacheSource
    k: int = 0


class Policy:
    """Política base: el turno 0 siempre es frío"""
    name = 'policy'

    def action(self, followup: int, state: CacheState) -> Action:
        raise NotImplementedError


class ColdDense(Policy):
    name = 'cold'

    def action(self, followup: int, state: CacheState) -> Action:
        return Action(CacheSource.FRESH)


class RawWarmReuse(Policy):
    name = 'raw'

    def action(self, followup: int, state: CacheState) -> Action:
        return Action(CacheSource.RAW_REUSED)


class FixedK(Policy):
    def __init__(self, k: int = 1):
        if k < 0:
            raise ConfigurationError(f"k debe ser >= 0, recibido {k}")
        self.k = k
        self.name = f'fixed-k:{k}'

    def action(self, followup: int, state: CacheState) -> Action:
        if self.k == 0:
            return Action(CacheSource.RAW_REUSED)
        return Action(CacheSource.REPAIRED, self.k)


class AdaptiveRepair(Policy):
    """Repara con K=1 en el primer follow-up y luego hereda la caché reparada"""
    name = 'adaptive'

    def action(self, followup: int, state: CacheState) -> Action:
        if followup == 1 or state.source not in (CacheSource.REPAIRED, CacheSource.INHERITED):
            return Action(CacheSource.REPAIRED, 1)
        return Action(CacheSource.INHERITED)


class ScheduledRefresh(Policy):
    """Como AdaptiveRepair, pero vuelve a reparar en cada follow-up múltiplo del período"""

    def __init__(self, period: int = 10):
        if period < 1:
            raise ConfigurationError(f"El período debe ser >= 1, recibido {period}")
        self.period = period
        self.name = f'refresh:{period}'

    def action(self, followup: int, state: CacheState) -> Action:
        if followup == 1 or followup % self.period == 0:
            return Action(CacheSource.REPAIRED, 1)
        return Action(CacheSource.INHERITED)


def parse_policy(text: str) -> Policy:
    """cold | raw | adaptive | fixed-k:<k> | refresh:<p>"""
    name, _, arg = text.strip().partition(':')
    try:
        if name == 'cold' and not arg:
            return ColdDense()
        if name == 'raw' and not arg:
            return RawWarmReuse()
        if name == 'adaptive' and not arg:
            return AdaptiveRepair()
        if name == 'fixed-k':
            return FixedK(int(arg) if arg else 1)
        if name == 'refresh':
            return ScheduledRefresh(int(arg) if arg else 10)
    except ValueError:
        raise ConfigurationError(f"Argumento inválido en la política '{text}'")
    raise ConfigurationError(f"Política desconocida: '{text}'")


@dataclass(frozen=True)
class LatencyModel:
    """
    Modelo afín en tokens de cola: un follow-up cuesta t_text + c_tok * (tokens extra),
    donde cada frame re-prefill aporta tokens_per_frame tokens
    """
    t_cold: float = 80.0
    t_text: float = 0.675
    c_tok: float = (6.65 - 0.675) / 401
    tokens_per_frame: int = 401
    question_tokens: int = 50
    jitter_sigma: float = 0.0  # lognormal sobre follow-ups

    def __post_init__(self):
        if min(self.t_cold, self.t_text, self.c_tok) <= 0:
            raise ConfigurationError("t_cold, t_text y c_tok deben ser > 0")
        if self.t_text >= self.t_cold:
            raise ConfigurationError("t_text debe ser menor que t_cold")
        if self.tokens_per_frame < 1 or self.question_tokens < 0 or self.jitter_sigma < 0:
            raise ConfigurationError("Parámetros de tokens o jitter inválidos")

    @classmethod
    def calibrate(cls, long_point: Tuple[float, float], short_point: Tuple[float, float],
                  t_cold: float = 80.0, tokens_per_frame: int = 401, question_tokens: int = 50,
                  jitter_sigma: float = 0.0) -> 'LatencyModel':
        """Ajusta pendiente y costo de texto desde dos puntos (tokens de cola, latencia)"""
        (tail_a, lat_a), (tail_b, lat_b) = long_point, short_point
        if tail_a == tail_b:
            raise ConfigurationError("Los puntos de calibración necesitan colas distintas")
        c_tok = (lat_a - lat_b) / (tail_a - tail_b)
        t_text = lat_b - c_tok * (tail_b - question_tokens)
        return cls(t_cold=t_cold, t_text=t_text, c_tok=c_tok, tokens_per_frame=tokens_per_frame,
                   question_tokens=question_tokens, jitter_sigma=jitter_sigma)

    def tail_tokens(self, k: int, anchor_tokens: int = 0) -> int:
        return self.tokens_per_frame * k + self.question_tokens + anchor_tokens

    def followup_latency(self, k: int, anchor_tokens: int = 0) -> float:
        return self.t_text + self.c_tok * (self.tokens_per_frame * k + anchor_tokens)


@dataclass(frozen=True)
class BasinModel:
    depth_threshold: int = 6500
    attractors: AttractorSet = field(default_factory=AttractorSet)
    pathology_mode: str = 'always'  # always | probabilistic
    pathology_probability: float = 0.5
    enabled: bool = True
    repeat: int = 8

    def __post_init__(self):
        if self.depth_threshold <= 0:
            raise ConfigurationError("depth_threshold debe ser > 0")
        if self.pathology_mode not in ('always', 'probabilistic'):
            raise ConfigurationError(f"Modo de patología desconocido: {self.pathology_mode}")
        if not 0.0 <= self.pathology_probability <= 1.0:
            raise ConfigurationError("pathology_probability fuera de [0, 1]")
        if self.enabled and not self.attractors.strings:
            raise ConfigurationError("Un basin habilitado necesita atractores")

    def in_basin(self, source: CacheSource, depth: int) -> bool:
        return self.enabled and source is CacheSource.RAW_REUSED and depth > self.depth_threshold

    def attractor_text(self, followup: int) -> str:
        strings = self.attractors.strings
        attractor = strings[followup % len(strings)]
        return ' '.join([attractor] * self.repeat)


@dataclass(frozen=True)
class AnswerOracle:
    """
    Oráculo determinista: responde la respuesta densa canónica salvo que una regla de corrupción
    por fuente de caché la cambie
    """
    flip_rates: Dict[str, float] = field(default_factory=dict)  # por CacheSource.value
    anchored_flip_rates: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for rates in (self.flip_rates, self.anchored_flip_rates):
            for source, rate in rates.items():
                if source not in {s.value for s in CacheSource}:
                    raise ConfigurationError(f"Fuente de caché desconocida: {source}")
                if not 0.0 <= rate <= 1.0:
                    raise ConfigurationError(f"Tasa fuera de [0, 1] para {source}: {rate}")

    def flip_rate(self, question: QuestionSpec, source: CacheSource) -> float:
        rates = self.anchored_flip_rates if question.anchored else self.flip_rates
        return rates.get(source.value, 0.0)

    def answer(self, question: QuestionSpec, source: CacheSource, rng: np.random.Generator) -> str:
        rate = self.flip_rate(question, source)
        # el generador se consume siempre para que el flujo no dependa de la tasa
        draw = rng.random()
        flipped = draw < rate
        if question.open_ended:
            return question.canonical + (' [revised]' if flipped else '')
        letter = question.canonical
        if flipped:
            choices = [c for c in OPTION_LETTERS[:question.n_options] if c != letter]
            letter = choices[int(rng.integers(len(choices)))]
        return f"Answer: {letter}."


@dataclass(frozen=True)
class TurnRecord:
    turn: int
    question_id: str
    policy: str
    cache_source: str
    raw_text: str
    choice: str
    correct: bool
    latency_s: float
    tail_tokens: int
    prefix_coverage: float
    pathological: bool
    repaired_frames: int


@dataclass(frozen=True)
class SessionLog:
    video_id: str
    policy: str
    n_frames: int
    records: Tuple[TurnRecord, ...]

    def to_records(self) -> List[Dict]:
        rows = []
        for rec in self.records:
            row = asdict(rec)
            row['latency_s'] = round(rec.latency_s, 6)
            row['prefix_coverage'] = round(rec.prefix_coverage, 6)
            row.update(record='turn', video_id=self.video_id, n_frames=self.n_frames)
            rows.append(row)
        return rows


def _score(question: QuestionSpec, raw_text: str) -> Tuple[str, bool]:
    if question.open_ended:
        return OPEN_ENDED, raw_text == question.answer_key
    choice = parse_choice(raw_text, question.n_options)
    return choice, choice == question.answer_key


def run_session(schedule: QuerySchedule, policy: Policy, oracle: AnswerOracle,
                latency: LatencyModel, basin: BasinModel,
                seed: Union[int, np.random.SeedSequence] = 0) -> SessionLog:
    """
    Ejecuta la agenda turno a turno; el estado de caché es una dependencia serial
    """
    rng = np.random.default_rng(seed)
    prefix_tokens = schedule.n_frames * latency.tokens_per_frame
    state = CacheState()
    records = []

    for turn, question in enumerate(schedule.turns):
        anchor = schedule.anchor_tokens if question.anchored and turn > 0 else 0
        prompt_tokens = prefix_tokens + latency.question_tokens + anchor

        if turn == 0:
            action = Action(CacheSource.FRESH)
        else:
            action = policy.action(turn, state)
            if action.source is CacheSource.INHERITED and state.source not in (
                    CacheSource.REPAIRED, CacheSource.INHERITED):
                raise SessionError(
                    f"{policy.name}: herencia desde {state.source.value} en el turno {turn}"
                )
            if action.source is CacheSource.NONE:
                raise SessionError(f"{policy.name}: fuente inválida en el turno {turn}")

        if action.source is CacheSource.FRESH:
            seconds = latency.t_cold
            tail = prompt_tokens
            reused = 0
            age = 0
        else:
            if action.k > schedule.n_frames:
                raise SessionError(f"K={action.k} excede los {schedule.n_frames} frames")
            seconds = latency.followup_latency(action.k, anchor)
            if latency.jitter_sigma > 0:
                seconds *= float(rng.lognormal(0.0, latency.jitter_sigma))
            tail = latency.tail_tokens(action.k, anchor)
            reused = prefix_tokens - action.k * latency.tokens_per_frame
            age = 0 if action.source is CacheSource.REPAIRED else state.age_in_turns + 1

        in_basin = basin.in_basin(action.source, prefix_tokens)
        pathological = in_basin
        if in_basin and basin.pathology_mode == 'probabilistic':
            pathological = bool(rng.random() < basin.pathology_probability)

        if pathological:
            raw_text = basin.attractor_text(turn)
        else:
            raw_text = oracle.answer(question, action.source, rng)
        choice, correct = _score(question, raw_text)

        state = CacheState(source=action.source, depth=prefix_tokens, age_in_turns=age, basin=in_basin)
        records.append(TurnRecord(
            turn=turn,
            question_id=question.question_id,
            policy=policy.name,
            cache_source=action.source.value,
            raw_text=raw_text,
            choice=choice,
            correct=correct,
            latency_s=seconds,
            tail_tokens=tail,
            prefix_coverage=reused / prompt_tokens,
            pathological=pathological,
            repaired_frames=action.k if action.source is CacheSource.REPAIRED else 0,
        ))

    return SessionLog(video_id=schedule.video_id, policy=policy.name,
                      n_frames=schedule.n_frames, records=tuple(records))


def run_cohort(schedules: Sequence[QuerySchedule], policy: Policy, oracle: AnswerOracle,
               latency: LatencyModel, basin: BasinModel, seed: int = 0,
               workers: int = 1) -> List[SessionLog]:
    """Sesiones independientes con una semilla derivada por sesión; el resultado no depende de workers"""
    if not schedules:
        return []
    seeds = np.random.SeedSequence(seed).spawn(len(schedules))
    logs = Parallel(n_jobs=workers, prefer='threads')(
        delayed(run_session)(schedule, policy, oracle, latency, basin, child)
        for schedule, child in zip(schedules, seeds)
    )
    logger.info(f"Cohorte {policy.name}: {len(logs)} sesiones simuladas")
    return list(logs)


@dataclass(frozen=True)
class CohortSummary:
    n_sessions: int = 0
    n_queries: int = 0
    n_followups: int = 0
    cold_first_median: Optional[float] = None
    followup_median: Optional[float] = None
    turn_medians: Dict[int, float] = field(default_factory=dict)
    pathological: int = 0
    repair_followups: int = 0
    post_repair_followups: int = 0
    tail_tokens_median: Optional[float] = None
    coverage_median: Optional[float] = None

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['turn_medians'] = {str(k): round(v, 6) for k, v in self.turn_medians.items()}
        for key in ('cold_first_median', 'followup_median', 'tail_tokens_median', 'coverage_median'):
            if data[key] is not None:
                data[key] = round(data[key], 6)
        data['record'] = 'summary'
        return data


def logs_frame(logs: Sequence[SessionLog]) -> pd.DataFrame:
    rows = [r for log in logs for r in log.to_records()]
    return pd.DataFrame(rows)


def cohort_summary(logs: Sequence[SessionLog]) -> CohortSummary:
    df = logs_frame(logs)
    if df.empty:
        return CohortSummary()
    follow = df[df['turn'] > 0]
    first = df[df['turn'] == 0]
    turn_medians = {int(t): float(v) for t, v in df.groupby('turn')['latency_s'].median().items()}
    return CohortSummary(
        n_sessions=len(logs),
        n_queries=len(df),
        n_followups=len(follow),
        cold_first_median=float(first['latency_s'].median()),
        followup_median=float(follow['latency_s'].median()) if len(follow) else None,
        turn_medians=turn_medians,
        pathological=int(df['pathological'].sum()),
        repair_followups=int((follow['cache_source'] == CacheSource.REPAIRED.value).sum()),
        post_repair_followups=int((follow['cache_source'] == CacheSource.INHERITED.value).sum()),
        tail_tokens_median=float(follow['tail_tokens'].median()) if len(follow) else None,
        coverage_median=float(follow['prefix_coverage'].median()) if len(follow) else None,
    )


def warm_speedup(cold_followup_median: float, session_followup_median: float) -> float:
    """Mediana de follow-ups fríos / mediana de follow-ups de sesión"""
    if cold_followup_median <= 0 or session_followup_median <= 0:
        raise SessionError("Las medianas deben ser > 0")
    return cold_followup_median / session_followup_median


def all_query_speedup(cold_all_query_median: float, session_followup_median: float) -> float:
    """Denominador all-query: mediana de todas las consultas frías / mediana de follow-ups de sesión"""
    if cold_all_query_median <= 0 or session_followup_median <= 0:
        raise SessionError("Las medianas deben ser > 0")
    return cold_all_query_median / session_followup_median


def session_speedup(q: int, t_cold_mean: float, t_cold_first: float, t_warm_mean: float) -> float:
    """Q consultas frías contra una consulta fría inicial más Q-1 follow-ups"""
    if q < 1:
        raise SessionError(f"Q debe ser >= 1, recibido {q}")
    if min(t_cold_mean, t_cold_first, t_warm_mean) <= 0:
        raise SessionError("Los tiempos deben ser > 0")
    return q * t_cold_mean / (t_cold_first + (q - 1) * t_warm_mean)


def economics_row(warm: float, q1: float, qs: Sequence[int] = (2, 5, 10, 50)) -> Dict[int, float]:
    """
    Columnas Q de una celda a partir del multiplicador warm y el valor Q=1,
    con t_cold_mean normalizado a 1
    """
    if warm <= 0 or q1 <= 0:
        raise SessionError("warm y Q=1 deben ser > 0")
    return {q: session_speedup(q, 1.0, 1.0 / q1, 1.0 / warm) for q in qs}


def backsolve_q1(warm: float, q: int, value: float) -> float:
    """Despeja el valor Q=1 que reproduce la columna Q indicada"""
    if q < 2:
        raise SessionError("Se necesita Q >= 2 para despejar Q=1")
    t_first = q / value - (q - 1) / warm
    if t_first <= 0:
        raise SessionError(f"Sin solución positiva para warm={warm}, Q={q}, valor={value}")
    return 1.0 / t_first


def prompt_frame_throughput(n_frames: int, warm_latency: float) -> float:
    if n_frames <= 0 or warm_latency <= 0:
        raise SessionError("n_frames y la latencia deben ser > 0")
    return n_frames / warm_latency


def throughput_summary(n_frames: int, warm_latencies: Sequence[float],
                       threshold_fps: float = 30.0) -> Dict:
    if not warm_latencies:
        raise SessionError("No hay latencias warm")
    fps = np.array([prompt_frame_throughput(n_frames, lat) for lat in warm_latencies])
    return {
        'n': int(fps.size),
        'median_fps': float(np.median(fps)),
        'min_fps': float(fps.min()),
        'max_fps': float(fps.max()),
        'at_or_above': int((fps >= threshold_fps).sum()),
        'threshold_fps': threshold_fps,
    }


def cycle_schedule(video_id: str, n_frames: int, questions: Sequence[QuestionSpec], horizon: int,
                   dense_anchor: bool = False, anchor_tokens: int = 16) -> QuerySchedule:
    """Recorre cíclicamente un conjunto fijo de preguntas hasta completar horizon turnos"""
    if horizon < 1 or not questions:
        raise SessionError("Se requiere horizon >= 1 y al menos una pregunta")
    turns = []
    for turn in range(horizon):
        q = questions[turn % len(questions)]
        turns.append(QuestionSpec(
            question_id=f"{q.question_id}#{turn}",
            answer_key=q.answer_key,
            n_options=q.n_options,
            cold_answer=q.cold_answer,
            anchored=dense_anchor and turn > 0,
        ))
    return QuerySchedule(video_id=video_id, n_frames=n_frames, turns=tuple(turns),
                         anchor_tokens=anchor_tokens)


def question_from_dict(data: Dict) -> QuestionSpec:
    try:
        return QuestionSpec(
            question_id=str(data['question_id']),
            answer_key=str(data['answer_key']),
            n_options=int(data.get('n_options', 4)),
            cold_answer=data.get('cold_answer'),
            anchored=bool(data.get('anchored', False)),
        )
    except KeyError as e:
        raise SchemaError(f"Pregunta sin el campo {str(e)}")


def schedules_from_dict(data) -> List[QuerySchedule]:
    """
    Acepta {"schedules": [...]} o una lista. Cada agenda trae "turns" explícitos o
    "questions" + "horizon" para el recorrido cíclico.
    """
    items = data.get('schedules') if isinstance(data, dict) else data
    if not isinstance(items, list):
        raise SchemaError("Se esperaba una lista de agendas")
    schedules = []
    for item in items:
        try:
            video_id = str(item['video_id'])
            n_frames = int(item['n_frames'])
            anchor_tokens = int(item.get('anchor_tokens', 16))
            if 'turns' in item:
                turns = tuple(question_from_dict(t) for t in item['turns'])
                schedules.append(QuerySchedule(video_id, n_frames, turns, anchor_tokens))
            else:
                questions = [question_from_dict(q) for q in item['questions']]
                schedules.append(cycle_schedule(video_id, n_frames, questions, int(item['horizon']),
                                                bool(item.get('dense_anchor', False)), anchor_tokens))
        except KeyError as e:
            raise SchemaError(f"Agenda sin el campo {str(e)}")
        except (TypeError, ValueError) as e:
            raise SchemaError(f"Agenda inválida: {str(e)}")
    return schedules


def latency_from_dict(data: Optional[Dict]) -> LatencyModel:
    if not data:
        return LatencyModel()
    data = dict(data)
    if 'calibration' in data:
        points = data.pop('calibration')
        try:
            return LatencyModel.calibrate(tuple(points[0]), tuple(points[1]), **data)
        except (IndexError, TypeError) as e:
            raise SchemaError(f"Calibración inválida: {str(e)}")
    try:
        return LatencyModel(**data)
    except TypeError as e:
        raise SchemaError(f"Modelo de latencia inválido: {str(e)}")


def basin_from_dict(data: Optional[Dict]) -> BasinModel:
    if not data:
        return BasinModel()
    data = dict(data)
    if 'attractors' in data:
        data['attractors'] = AttractorSet.from_dict(data['attractors'])
    try:
        return BasinModel(**data)
    except TypeError as e:
        raise SchemaError(f"Modelo de basin inválido: {str(e)}")


def oracle_from_dict(data: Optional[Dict]) -> AnswerOracle:
    if not data:
        return AnswerOracle()
    try:
        return AnswerOracle(**data)
    except TypeError as e:
        raise SchemaError(f"Oráculo inválido: {str(e)}")


@session_bp.cli.command('simulate')
@click.option('--schedules', 'schedules_path', required=True, help='JSON con agendas de preguntas')
@click.option('--policy', 'policy_text', required=True,
              help='cold | raw | adaptive | fixed-k:<k> | refresh:<p>')
@click.option('--latency', 'latency_path', default=None, help='JSON del modelo de latencia')
@click.option('--basin', 'basin_path', default=None, help='JSON del modelo de basin')
@click.option('--oracle', 'oracle_path', default=None, help='JSON de reglas de corrupción')
@click.option('--seed', type=int, default=None)
@click.option('--workers', type=int, default=None)
@click.option('--out', default=None, help='Archivo JSONL de salida')
def simulate_command(schedules_path, policy_text, latency_path, basin_path, oracle_path, seed,
                     workers, out):
    """Simula una cohorte de sesiones y escribe un SessionLog JSONL."""
    try:
        seed = resolve_option(seed, 'DEFAULT_SEED')
        policy = parse_policy(policy_text)
        schedules = schedules_from_dict(read_json(schedules_path))
        latency = latency_from_dict(read_json(latency_path) if latency_path else None)
        basin = basin_from_dict(read_json(basin_path) if basin_path else None)
        oracle = oracle_from_dict(read_json(oracle_path) if oracle_path else None)

        logs = run_cohort(schedules, policy, oracle, latency, basin, seed,
                          resolve_option(workers, 'WORKERS'))
        summary = cohort_summary(logs)

        inputs = [p for p in (schedules_path, latency_path, basin_path, oracle_path) if p]
        run = run_config('simulate', inputs=inputs, outputs=[out], seed=seed, policy=policy.name,
                         latency=asdict(latency), basin={
                             'depth_threshold': basin.depth_threshold,
                             'pathology_mode': basin.pathology_mode,
                             'enabled': basin.enabled,
                         })
        records = [run.header()]
        for log in logs:
            records.extend(log.to_records())
        records.append(summary.to_dict())
        emit(jsonl_text(records), out)
        click.echo(f"{policy.name}: {summary.n_sessions} sesiones, {summary.n_queries} consultas, "
                   f"{summary.pathological} patológicas", err=out is None)
    except ReusoError as e:
        logger.error(f"Error en comando simulate: {str(e)}")
        raise CommandError(str(e))
